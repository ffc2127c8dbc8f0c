#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "strobe/geometry.hpp"
#include "test_util.hpp"

using namespace strobe;

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(-M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(3.0 * M_PI / 2.0) == doctest::Approx(-M_PI / 2.0));
  CHECK(wrap_angle(0.0) == 0.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = wrap_angle(u(rng));
    CHECK(a > -M_PI);
    CHECK(a <= M_PI);
  }
}

TEST_CASE("pose composition") {
  const Pose2 id{};
  const Pose2 p{3.0, -2.0, 0.7};
  SUBCASE("identity") {
    const Pose2 r = pose_compose(id, p);
    CHECK(r.x == doctest::Approx(p.x));
    CHECK(r.y == doctest::Approx(p.y));
    CHECK(r.yaw == doctest::Approx(p.yaw));
  }
  SUBCASE("pure translation") {
    const Pose2 r = pose_compose({1, 0, 0}, {2, 0, 0});
    CHECK(r.x == doctest::Approx(3.0));
    CHECK(r.y == doctest::Approx(0.0));
    CHECK(r.yaw == doctest::Approx(0.0));
  }
  SUBCASE("90 degree rotation maps +x to +y") {
    const Pose2 r = pose_compose({0, 0, M_PI / 2}, {1, 0, 0});
    CHECK(r.x == doctest::Approx(0.0));
    CHECK(r.y == doctest::Approx(1.0));
    CHECK(r.yaw == doctest::Approx(M_PI / 2));
  }
  SUBCASE("associativity to 1e-12") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 200; ++i) {
      const Pose2 a{u(rng), u(rng), u(rng)};
      const Pose2 b{u(rng), u(rng), u(rng)};
      const Pose2 c{u(rng), u(rng), u(rng)};
      const Pose2 l = pose_compose(pose_compose(a, b), c);
      const Pose2 r = pose_compose(a, pose_compose(b, c));
      CHECK(std::fabs(l.x - r.x) < 1e-12);
      CHECK(std::fabs(l.y - r.y) < 1e-12);
      CHECK(std::fabs(wrap_angle(l.yaw - r.yaw)) < 1e-12);
    }
  }
  SUBCASE("inverse") {
    const Pose2 r = pose_compose(p, pose_inverse(p));
    CHECK(std::fabs(r.x) < 1e-12);
    CHECK(std::fabs(r.y) < 1e-12);
    CHECK(std::fabs(r.yaw) < 1e-12);
  }
}

TEST_CASE("pose_apply and its inverse round-trip") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    const Pose2 p{u(rng), u(rng), u(rng)};
    const double lx = u(rng), ly = u(rng);
    double wx, wy, bx, by;
    pose_apply(p, lx, ly, wx, wy);
    pose_apply_inverse(p, wx, wy, bx, by);
    CHECK(bx == doctest::Approx(lx).epsilon(1e-12));
    CHECK(by == doctest::Approx(ly).epsilon(1e-12));
  }
}

TEST_CASE("track_state_at") {
  LabelTrack t;
  t.actor_id = 1;
  t.cls = ClassId::Vehicle;
  t.length = 4.8;
  t.width = 2.0;
  SUBCASE("stationary actor returns its fixed pose at any covered time") {
    t.states = {{Timestamp{0}, {5, 6, 0.3}, 0, 0, 0}, {Timestamp{100000}, {5, 6, 0.3}, 0, 0, 0}};
    const auto q = track_state_at(t, Timestamp{43210});
    CHECK(q.pose.x == doctest::Approx(5.0));
    CHECK(q.pose.y == doctest::Approx(6.0));
    CHECK(q.pose.yaw == doctest::Approx(0.3));
    CHECK(q.length == doctest::Approx(4.8));
  }
  SUBCASE("constant velocity: 10 m/s for 100 ms is 1.0 m") {
    t.states = {{Timestamp{0}, {0, 0, 0}, 10, 0, 0}, {Timestamp{90000}, {0.9, 0, 0}, 10, 0, 0}};
    const auto q = track_state_at(t, Timestamp{100000});
    CHECK(q.pose.x == doctest::Approx(1.0));
    CHECK(q.pose.y == doctest::Approx(0.0));
  }
  SUBCASE("yaw rate advances heading") {
    t.states = {{Timestamp{0}, {0, 0, 0}, 0, 0, 1.0},
                {Timestamp{400000}, {0, 0, 0.4}, 0, 0, 1.0},
                {Timestamp{800000}, {0, 0, 0.8}, 0, 0, 1.0}};
    const auto q = track_state_at(t, Timestamp{500000});
    CHECK(q.pose.yaw == doctest::Approx(0.5));
  }
  SUBCASE("stored state times return the state verbatim") {
    t.states = {{Timestamp{0}, {1, 2, 0.1}, 3, 4, 0.5}, {Timestamp{10000}, {7, 8, 0.2}, 3, 4, 0.5}};
    const auto q = track_state_at(t, Timestamp{10000});
    CHECK(q.pose.x == 7.0);
    CHECK(q.pose.y == 8.0);
    CHECK(q.pose.yaw == 0.2);
  }
  SUBCASE("queries beyond one packet duration past either end throw") {
    t.states = {{Timestamp{50000}, {0, 0, 0}, 0, 0, 0}, {Timestamp{60000}, {0, 0, 0}, 0, 0, 0}};
    CHECK_NOTHROW(track_state_at(t, Timestamp{40000}));
    CHECK_NOTHROW(track_state_at(t, Timestamp{70000}));
    CHECK_THROWS_AS(track_state_at(t, Timestamp{39999}), std::out_of_range);
    CHECK_THROWS_AS(track_state_at(t, Timestamp{70001}), std::out_of_range);
  }
}

TEST_CASE("rotated_iou") {
  const OrientedBox veh{0, 0, 4.8, 2.0, 0};
  SUBCASE("identical boxes") { CHECK(rotated_iou(veh, veh) == doctest::Approx(1.0)); }
  SUBCASE("disjoint boxes") {
    CHECK(rotated_iou(veh, {100, 100, 4.8, 2.0, 0}) == doctest::Approx(0.0));
  }
  SUBCASE("1.0 m shift along the length: 7.6 / 11.6") {
    CHECK(rotated_iou(veh, {1.0, 0, 4.8, 2.0, 0}) == doctest::Approx(7.6 / 11.6).epsilon(1e-9));
  }
  SUBCASE("0.1 m shift along the length: 9.4 / 9.8") {
    CHECK(rotated_iou(veh, {0.1, 0, 4.8, 2.0, 0}) == doctest::Approx(9.4 / 9.8).epsilon(1e-9));
  }
  SUBCASE("axis-aligned overlap 6 / 10") {
    CHECK(rotated_iou({0, 0, 4, 2, 0}, {1, 0, 4, 2, 0}) == doctest::Approx(0.6).epsilon(1e-9));
  }
  SUBCASE("symmetry and rigid invariance") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-2.0, 2.0), dims(0.5, 5.0), ang(-M_PI, M_PI);
    for (int i = 0; i < 200; ++i) {
      const OrientedBox a{u(rng), u(rng), dims(rng), dims(rng), ang(rng)};
      const OrientedBox b{u(rng), u(rng), dims(rng), dims(rng), ang(rng)};
      const double iou = rotated_iou(a, b);
      CHECK(rotated_iou(b, a) == doctest::Approx(iou).epsilon(1e-12));
      const Pose2 rt{u(rng), u(rng), ang(rng)};
      auto moved = [&](const OrientedBox& x) {
        double wx, wy;
        pose_apply(rt, x.cx, x.cy, wx, wy);
        return OrientedBox{wx, wy, x.length, x.width, wrap_angle(x.heading + rt.yaw)};
      };
      CHECK(std::fabs(rotated_iou(moved(a), moved(b)) - iou) < 1e-9);
    }
  }
  SUBCASE("matches Monte-Carlo area sampling") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.5, 1.5), dims(1.0, 4.0), ang(-M_PI, M_PI);
    for (int i = 0; i < 15; ++i) {
      const OrientedBox a{u(rng), u(rng), dims(rng), dims(rng), ang(rng)};
      const OrientedBox b{u(rng), u(rng), dims(rng), dims(rng), ang(rng)};
      const double exact = rotated_iou(a, b);
      const double mc = testutil::mc_iou(a, b, 200000, rng);
      CHECK(std::fabs(exact - mc) < 0.02);
    }
  }
}

TEST_CASE("centroid_distance") {
  CHECK(centroid_distance(0, 0, 0, 0) == 0.0);
  CHECK(centroid_distance(0, 0, 3, 4) == doctest::Approx(5.0));
  CHECK(centroid_distance(1, 1, 1.3, 1.4) == doctest::Approx(0.5));
}

TEST_CASE("box_corners are counter-clockwise with the right area") {
  const OrientedBox b{2, -1, 4.8, 2.0, 0.6};
  const auto c = box_corners(b);
  REQUIRE(c.size() == 4);
  double shoelace = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& p = c[static_cast<size_t>(i)];
    const auto& q = c[static_cast<size_t>((i + 1) % 4)];
    shoelace += p.first * q.second - q.first * p.second;
  }
  CHECK(shoelace / 2.0 == doctest::Approx(4.8 * 2.0).epsilon(1e-9));  // positive = CCW
}

TEST_CASE("class helpers") {
  CHECK(class_height(ClassId::Vehicle) == doctest::Approx(1.8));
  CHECK(class_height(ClassId::Pedestrian) == doctest::Approx(1.7));
  CHECK(class_height(ClassId::Cyclist) == doctest::Approx(1.6));
  for (ClassId c : {ClassId::Vehicle, ClassId::Pedestrian, ClassId::Cyclist}) {
    CHECK(class_from_name(class_name(c)) == c);
  }
  CHECK(!class_from_name("tractor").has_value());
}
