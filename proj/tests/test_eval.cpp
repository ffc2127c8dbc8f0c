#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "strobe/eval.hpp"
#include "test_util.hpp"

using namespace strobe;

namespace {

LabelTrack static_track(int id, ClassId cls, double x, double y, double yaw, double l,
                        double w, double t0_s, double t1_s) {
  LabelTrack t;
  t.actor_id = id;
  t.cls = cls;
  t.length = l;
  t.width = w;
  t.states.push_back({Timestamp::from_seconds(t0_s), Pose2{x, y, yaw}, 0, 0, 0});
  t.states.push_back({Timestamp::from_seconds(t1_s), Pose2{x, y, yaw}, 0, 0, 0});
  return t;
}

DetBox det(ClassId cls, double cx, double cy, double l, double w, double heading,
           double score) {
  DetBox d;
  d.cls = cls;
  d.cx = cx;
  d.cy = cy;
  d.length = l;
  d.width = w;
  d.heading = heading;
  d.score = score;
  return d;
}

eval::FrameRecord packet_frame(int index) {
  eval::FrameRecord f;
  f.packet_index = index;
  f.t_start = Timestamp{index * kPacketDurationUs};
  f.t_end = Timestamp{(index + 1) * kPacketDurationUs};
  return f;
}

}  // namespace

TEST_CASE("average_precision basics") {
  SUBCASE("TP, FP, TP over two labels integrates the envelope to 5/6") {
    // precisions 1, 1/2, 2/3 -> envelope 1, 2/3, 2/3; recall steps at 1/2 and 1
    const double ap =
        eval::average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 2);
    CHECK(ap == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)));
  }
  SUBCASE("all detections true over all labels is perfect") {
    CHECK(eval::average_precision({{0.9, true}, {0.5, true}}, 2) == doctest::Approx(1.0));
  }
  SUBCASE("no labels means the cell is undefined, not zero") {
    CHECK(std::isnan(eval::average_precision({{0.9, false}}, 0)));
    CHECK(std::isnan(eval::average_precision({}, 0)));
  }
  SUBCASE("labels but no detections scores zero") {
    CHECK(eval::average_precision({}, 3) == 0.0);
  }
  SUBCASE("input order does not matter, only scores do") {
    const double a =
        eval::average_precision({{0.7, true}, {0.9, true}, {0.8, false}}, 2);
    const double b =
        eval::average_precision({{0.9, true}, {0.8, false}, {0.7, true}}, 2);
    CHECK(a == b);
  }
}

TEST_CASE("average_precision agrees with the brute-force oracle") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> n_dets(0, 30), n_labels(0, 10);
  std::uniform_real_distribution<double> uscore(0.0, 1.0);
  std::bernoulli_distribution tp(0.55);
  int nan_cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int labels = n_labels(rng);
    std::vector<std::pair<double, bool>> scored;
    int tps = 0;
    const int n = n_dets(rng);
    for (int i = 0; i < n; ++i) {
      const bool hit = labels > 0 && tps < labels && tp(rng);
      tps += hit;
      // quantized scores so ties are exercised
      scored.emplace_back(std::round(uscore(rng) * 8.0) / 8.0, hit);
    }
    const double got = eval::average_precision(scored, labels);
    const double want = testutil::brute_force_ap(scored, labels);
    if (labels == 0) {
      CHECK(std::isnan(got));
      CHECK(std::isnan(want));
      ++nan_cases;
    } else {
      CHECK(std::fabs(got - want) <= 1e-12);
    }
  }
  CHECK(nan_cases > 10);  // the degenerate branch was actually exercised
}

TEST_CASE("match_and_score") {
  eval::EvalConfig cfg;
  const OrientedBox gt{0.0, 0.0, 4.8, 2.0, 0.0};
  std::vector<eval::LabelBox> labels(1);
  labels[0].actor_id = 1;
  labels[0].cls = ClassId::Vehicle;
  labels[0].box = gt;

  SUBCASE("a 1 m longitudinal shift is a hit at 0.5 IoU but a miss at 0.7") {
    // overlap 3.8 x 2.0 = 7.6 over union 11.6: IoU about 0.655
    const std::vector<DetBox> dets{det(ClassId::Vehicle, 1.0, 0.0, 4.8, 2.0, 0.0, 0.9)};
    CHECK(rotated_iou({1.0, 0.0, 4.8, 2.0, 0.0}, gt) == doctest::Approx(7.6 / 11.6));
    const auto loose = eval::match_and_score(dets, labels, ClassId::Vehicle, 0.5, cfg);
    const auto strict = eval::match_and_score(dets, labels, ClassId::Vehicle, 0.7, cfg);
    REQUIRE(loose.scored.size() == 1);
    CHECK(loose.scored[0].second);
    CHECK_FALSE(strict.scored[0].second);
  }
  SUBCASE("a duplicate of a matched label becomes a false positive") {
    const std::vector<DetBox> dets{det(ClassId::Vehicle, 0.1, 0.0, 4.8, 2.0, 0.0, 0.9),
                                   det(ClassId::Vehicle, -0.1, 0.0, 4.8, 2.0, 0.0, 0.8)};
    const auto m = eval::match_and_score(dets, labels, ClassId::Vehicle, 0.5, cfg);
    REQUIRE(m.scored.size() == 2);
    CHECK(m.scored[0].second);
    CHECK_FALSE(m.scored[1].second);
    CHECK(m.num_labels == 1);
  }
  SUBCASE("classes never cross-match") {
    const std::vector<DetBox> dets{det(ClassId::Cyclist, 0.0, 0.0, 4.8, 2.0, 0.0, 0.9)};
    const auto m = eval::match_and_score(dets, labels, ClassId::Vehicle, 0.5, cfg);
    CHECK(m.scored.empty());
    CHECK(m.num_labels == 1);
    const auto c = eval::match_and_score(dets, labels, ClassId::Cyclist, 0.3, cfg);
    CHECK(c.num_labels == 0);
    CHECK(c.scored.size() == 1);
    CHECK_FALSE(c.scored[0].second);
  }
  SUBCASE("pedestrians match on centroid distance") {
    std::vector<eval::LabelBox> peds(1);
    peds[0].cls = ClassId::Pedestrian;
    peds[0].box = OrientedBox{2.0, 3.0, 0.6, 0.6, 0.0};
    const std::vector<DetBox> close{det(ClassId::Pedestrian, 2.2, 3.0, 0, 0, 0, 0.9)};
    const std::vector<DetBox> far{det(ClassId::Pedestrian, 2.0, 3.45, 0, 0, 0, 0.9)};
    CHECK(eval::match_and_score(close, peds, ClassId::Pedestrian, 0.3, cfg).scored[0].second);
    CHECK_FALSE(eval::match_and_score(far, peds, ClassId::Pedestrian, 0.3, cfg).scored[0].second);
    CHECK(eval::match_and_score(far, peds, ClassId::Pedestrian, 0.5, cfg).scored[0].second);
  }
  SUBCASE("loosening the threshold never lowers AP") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-6.0, 6.0), uscore(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<eval::LabelBox> ls(4);
      std::vector<DetBox> ds;
      for (auto& lb : ls) {
        lb.cls = ClassId::Vehicle;
        lb.box = OrientedBox{u(rng), u(rng), 4.8, 2.0, u(rng) / 3.0};
      }
      for (int i = 0; i < 6; ++i)
        ds.push_back(det(ClassId::Vehicle, u(rng), u(rng), 4.8, 2.0, u(rng) / 3.0,
                         uscore(rng)));
      const auto loose = eval::match_and_score(ds, ls, ClassId::Vehicle, 0.3, cfg);
      const auto strict = eval::match_and_score(ds, ls, ClassId::Vehicle, 0.6, cfg);
      const double ap_loose = eval::average_precision(loose.scored, loose.num_labels);
      const double ap_strict = eval::average_precision(strict.scored, strict.num_labels);
      CHECK(ap_loose >= ap_strict - 1e-12);
    }
  }
}

TEST_CASE("build_label_frame") {
  eval::EvalConfig cfg;
  eval::LabelData data;
  data.scenario = "toy";
  data.seed = 1;
  data.duration_s = 0.5;
  // actor 1 drives +x at 10 m/s, first observed in packet 2
  LabelTrack mover;
  mover.actor_id = 1;
  mover.cls = ClassId::Vehicle;
  mover.length = 4.8;
  mover.width = 2.0;
  for (int i = 0; i <= 50; ++i) {
    mover.states.push_back({Timestamp{i * kPacketDurationUs},
                            Pose2{i * 0.1, 0.0, 0.0}, 10.0, 0.0, 0.0});
  }
  data.tracks.push_back(mover);
  data.first_observed[1] = 2;
  data.returns_per_packet.assign(50, {});
  data.returns_per_packet[2][1] = 7;
  data.returns_per_packet[5][1] = 3;

  SUBCASE("nothing is scored before the first observation") {
    CHECK(eval::build_label_frame(data, packet_frame(1), eval::LabelMode::Emission, cfg)
              .empty());
    CHECK(eval::build_label_frame(data, packet_frame(2), eval::LabelMode::Emission, cfg)
              .size() == 1);
  }
  SUBCASE("emission mode reads the pose at the frame's end") {
    const auto lbls =
        eval::build_label_frame(data, packet_frame(4), eval::LabelMode::Emission, cfg);
    REQUIRE(lbls.size() == 1);
    CHECK(lbls[0].box.cx == doctest::Approx(0.5));  // t_end = 50 ms
  }
  SUBCASE("observation mode reads the pose when the points were acquired") {
    // frame 4 has no returns; the most recent returns are from packet 2
    const auto lbls =
        eval::build_label_frame(data, packet_frame(4), eval::LabelMode::Observation, cfg);
    REQUIRE(lbls.size() == 1);
    CHECK(lbls[0].box.cx == doctest::Approx(0.2));
    // at frame 5 fresh returns arrive and the pose advances
    const auto at5 =
        eval::build_label_frame(data, packet_frame(5), eval::LabelMode::Observation, cfg);
    REQUIRE(at5.size() == 1);
    CHECK(at5[0].box.cx == doctest::Approx(0.5));
  }
  SUBCASE("the zero-point flag tracks returns in the emitting packet") {
    const auto hot =
        eval::build_label_frame(data, packet_frame(2), eval::LabelMode::Emission, cfg);
    const auto cold =
        eval::build_label_frame(data, packet_frame(3), eval::LabelMode::Emission, cfg);
    REQUIRE(hot.size() == 1);
    REQUIRE(cold.size() == 1);
    CHECK_FALSE(hot[0].zero_points_this_frame);
    CHECK(cold[0].zero_points_this_frame);
  }
  SUBCASE("packet frames drop labels outside the region") {
    auto f = packet_frame(4);
    f.has_region = true;
    f.rx0 = -1.0; f.ry0 = -1.0; f.rx1 = 0.3; f.ry1 = 1.0;  // excludes x = 0.5
    CHECK(eval::build_label_frame(data, f, eval::LabelMode::Emission, cfg).empty());
    f.rx1 = 2.0;
    CHECK(eval::build_label_frame(data, f, eval::LabelMode::Emission, cfg).size() == 1);
    // sweep frames ignore the filter: the header saw the whole sweep
    f.rx1 = 0.3;
    f.is_sweep = true;
    CHECK(eval::build_label_frame(data, f, eval::LabelMode::Emission, cfg).size() == 1);
  }
  SUBCASE("labels beyond the range cap are dropped") {
    auto far = data;
    for (auto& s : far.tracks[0].states) s.pose.x += 80.0;
    CHECK(eval::build_label_frame(far, packet_frame(4), eval::LabelMode::Emission, cfg)
              .empty());
  }
}

TEST_CASE("evaluate on a static scene gives bitwise equal latency and common tables") {
  eval::EvalConfig cfg;
  eval::LabelData data;
  data.scenario = "static";
  data.seed = 3;
  data.duration_s = 0.1;
  data.tracks.push_back(static_track(1, ClassId::Vehicle, 5.0, 2.0, 0.3, 4.8, 2.0, 0.0, 0.1));
  data.tracks.push_back(static_track(2, ClassId::Pedestrian, -3.0, 1.0, 0.0, 0.6, 0.6, 0.0, 0.1));
  data.first_observed[1] = 0;
  data.first_observed[2] = 0;
  data.returns_per_packet.assign(10, {});
  for (auto& m : data.returns_per_packet) { m[1] = 5; m[2] = 2; }

  eval::DetectionRun run;
  run.scenario = "static";
  run.seed = 3;
  run.mode = "packet";
  for (int i = 0; i < 10; ++i) {
    auto f = packet_frame(i);
    // imperfect but matchable vehicle; pedestrian found only in even packets
    f.dets.push_back(det(ClassId::Vehicle, 5.1, 2.0, 4.8, 2.0, 0.3, 0.9));
    if (i % 2 == 0) f.dets.push_back(det(ClassId::Pedestrian, -3.1, 1.0, 0, 0, 0, 0.6));
    run.frames.push_back(f);
  }

  const auto rep = eval::evaluate(run, data, cfg);
  CHECK(std::memcmp(&rep.table[0], &rep.table[1], sizeof(rep.table[0])) == 0);
  CHECK(rep.table[0][0][0].ap == doctest::Approx(1.0));
  CHECK(rep.table[0][1][0].num_labels == 10);
  CHECK(rep.table[0][1][0].ap == doctest::Approx(0.5));
  // every pedestrian label had returns each packet, none were zero-point
  CHECK(rep.zero_point[1].total == 0);
  CHECK(rep.seen_point[1].total == 10);
  CHECK(rep.seen_point[1].matched == 5);
}

TEST_CASE("evaluate rejects mismatched runs") {
  eval::DetectionRun run;
  run.scenario = "a";
  run.seed = 1;
  eval::LabelData data;
  data.scenario = "b";
  data.seed = 1;
  CHECK_THROWS_AS(eval::evaluate(run, data, eval::EvalConfig{}), std::invalid_argument);
}

TEST_CASE("latency breakdown") {
  eval::DetectionRun run;
  run.mode = "packet";
  for (double ms : {4.0, 8.0, 2.0, 6.0, 100.0}) {
    eval::FrameRecord f;
    f.inference_ms = ms;
    run.frames.push_back(f);
  }
  const auto packet = eval::latency_breakdown(run);
  CHECK(packet.accumulation_ms == 10.0);
  CHECK(packet.inference_p50_ms == 6.0);
  CHECK(packet.inference_p95_ms == 100.0);
  CHECK(packet.total_p50_ms == 16.0);
  run.mode = "sweep";
  CHECK(eval::latency_breakdown(run).accumulation_ms == 100.0);
}
