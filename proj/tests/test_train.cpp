#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "strobe/bev.hpp"
#include "strobe/train.hpp"
#include "test_util.hpp"

using namespace strobe;

namespace {

net::AnchorGrid small_anchors(int fh, int fw) {
  net::AnchorGrid a;
  a.fused_region = bev::RegionRect{0, 0, fw, fh};
  a.origin_x = -16.0;
  a.origin_y = -16.0;
  a.resolution = 0.8;
  return a;
}

sim::LabelAtEmission make_label(int id, ClassId cls, double x, double y, double yaw,
                                double l, double w) {
  sim::LabelAtEmission lab;
  lab.actor_id = id;
  lab.cls = cls;
  lab.pose = Pose2{x, y, yaw};
  lab.length = l;
  lab.width = w;
  return lab;
}

// Fills the header so that every cell is a confident, loss-free background
// and every positive matches its target exactly.
te::Tensor<double> perfect_header(const train::TargetMap& t) {
  te::Tensor<double> h({net::HeaderLayout::kChannels, t.fh, t.fw});
  for (auto& v : h.data) v = 0.0;
  for (int ci = 0; ci < kNumClasses; ++ci) {
    const ClassId cls = static_cast<ClassId>(ci);
    const int sc = net::HeaderLayout::score_channel(cls);
    for (int cell = 0; cell < t.fh * t.fw; ++cell)
      h.at(sc, cell / t.fw, cell % t.fw) = -30.0;
    for (const auto& pos : t.positives[static_cast<size_t>(ci)]) {
      const int i = pos.cell / t.fw, j = pos.cell % t.fw;
      h.at(sc, i, j) = 30.0;
      for (int d = 0; d < net::HeaderLayout::reg_dims(cls); ++d)
        h.at(net::HeaderLayout::reg_channel(cls, d), i, j) = pos.target[static_cast<size_t>(d)];
    }
  }
  return h;
}

}  // namespace

TEST_CASE("assign_targets") {
  const auto anchors = small_anchors(40, 40);
  SUBCASE("vehicle centroid claims its fused cell") {
    const auto t = train::assign_targets(
        {make_label(1, ClassId::Vehicle, 7.0, 2.0, 0.2, 4.8, 2.0)}, anchors, Pose2{});
    REQUIRE(t.positives[0].size() == 1);
    const auto& pos = t.positives[0][0];
    CHECK(pos.cell == 22 * 40 + 28);  // cell (i=22, j=28) holds (7, 2)
    CHECK(pos.target[0] == doctest::Approx(0.2));   // dx to the cell center (6.8, 2.0)
    CHECK(pos.target[1] == doctest::Approx(0.0));
    CHECK(pos.target[2] == doctest::Approx(std::log(2.0)));
    CHECK(pos.target[3] == doctest::Approx(std::log(4.8)));
    CHECK(pos.target[4] == doctest::Approx(std::sin(0.2)));
    CHECK(pos.target[5] == doctest::Approx(std::cos(0.2)));
    CHECK(t.positive_mask[0][static_cast<size_t>(pos.cell)] == 1);
    CHECK(t.skipped_outside == 0);
  }
  SUBCASE("targets are expressed in the packet ego frame") {
    const Pose2 ego{10.0, 0.0, M_PI / 2.0};
    // world (10, 5) is ego-local (5, 0); heading pi/2 in the world is 0 locally
    const auto t = train::assign_targets(
        {make_label(1, ClassId::Vehicle, 10.0, 5.0, M_PI / 2.0, 4.0, 2.0)}, anchors, ego);
    REQUIRE(t.positives[0].size() == 1);
    const auto& pos = t.positives[0][0];
    CHECK(pos.cell / 40 == 20);        // local y = 0 -> i = 20
    CHECK(pos.cell % 40 == 26);        // local x = 5 -> j = 26
    CHECK(pos.target[0] == doctest::Approx(5.0 - (-16.0 + 26.5 * 0.8)));
    CHECK(pos.target[4] == doctest::Approx(0.0));
    CHECK(pos.target[5] == doctest::Approx(1.0));
  }
  SUBCASE("labels outside the region are skipped") {
    net::AnchorGrid a = small_anchors(10, 10);
    a.fused_region = bev::RegionRect{30, 30, 40, 40};  // covers [8, 16) m
    const auto t = train::assign_targets(
        {make_label(1, ClassId::Vehicle, 0.0, 0.0, 0.0, 4.8, 2.0),
         make_label(2, ClassId::Vehicle, 10.0, 10.0, 0.0, 4.8, 2.0)},
        a, Pose2{});
    CHECK(t.positives[0].size() == 1);
    CHECK(t.skipped_outside == 1);
  }
  SUBCASE("a cell holds at most one positive per class") {
    const auto t = train::assign_targets(
        {make_label(1, ClassId::Pedestrian, 0.1, 0.1, 0.0, 0.6, 0.6),
         make_label(2, ClassId::Pedestrian, 0.2, 0.2, 0.0, 0.6, 0.6),
         make_label(3, ClassId::Vehicle, 0.2, 0.2, 0.0, 4.8, 2.0)},
        anchors, Pose2{});
    CHECK(t.positives[static_cast<size_t>(ClassId::Pedestrian)].size() == 1);
    CHECK(t.positives[static_cast<size_t>(ClassId::Vehicle)].size() == 1);
    CHECK(t.skipped_outside == 1);
  }
}

TEST_CASE("detection_loss values") {
  const auto anchors = small_anchors(8, 8);
  train::TrainConfig cfg;
  std::mt19937_64 rng(1);
  const auto targets = train::assign_targets(
      {make_label(1, ClassId::Vehicle, -13.0, -13.0, 0.3, 4.8, 2.0)}, anchors, Pose2{});
  REQUIRE(targets.positives[0].size() == 1);
  const auto& pos = targets.positives[0][0];
  const int pi = pos.cell / 8, pj = pos.cell % 8;

  SUBCASE("a perfect prediction is (almost) free") {
    auto h = perfect_header(targets);
    te::Tape<double> tape;
    const int hv = tape.leaf(h, true);
    const auto loss = train::detection_loss(tape, hv, targets, cfg, rng);
    CHECK(loss.reg == doctest::Approx(0.0));
    CHECK(loss.cls < 1e-9);  // softplus(-30) per term
    CHECK(loss.total < 1e-8);
  }
  SUBCASE("0.5 m position error inside the quadratic zone costs 0.125") {
    auto h = perfect_header(targets);
    h.at(1, pi, pj) += 0.5;
    te::Tape<double> tape;
    const auto loss = train::detection_loss(tape, tape.leaf(h, true), targets, cfg, rng);
    CHECK(loss.reg == doctest::Approx(0.125));
  }
  SUBCASE("3.5 m error crosses into the linear zone: 3.0") {
    auto h = perfect_header(targets);
    h.at(2, pi, pj) -= 3.5;
    te::Tape<double> tape;
    const auto loss = train::detection_loss(tape, tape.leaf(h, true), targets, cfg, rng);
    CHECK(loss.reg == doctest::Approx(3.0));
  }
  SUBCASE("heading channels carry double weight") {
    auto h = perfect_header(targets);
    h.at(5, pi, pj) += 0.5;  // sin channel, gamma = 2
    te::Tape<double> tape;
    const auto loss = train::detection_loss(tape, tape.leaf(h, true), targets, cfg, rng);
    CHECK(loss.reg == doctest::Approx(0.25));
  }
  SUBCASE("an undecided positive score costs ln 2") {
    auto h = perfect_header(targets);
    h.at(0, pi, pj) = 0.0;
    te::Tape<double> tape;
    const auto loss = train::detection_loss(tape, tape.leaf(h, true), targets, cfg, rng);
    CHECK(loss.cls == doctest::Approx(std::log(2.0)));
    CHECK(loss.total == doctest::Approx(cfg.alpha * std::log(2.0)));
  }
  SUBCASE("hard mining keeps the worst negatives") {
    // one hot negative with logit 0 among confident ones; with K = 1 the
    // mean over kept negatives is exactly ln 2
    auto h = perfect_header(targets);
    h.at(0, 0, 0) = 0.0;
    auto k1 = cfg;
    k1.hard_k = 1;
    te::Tape<double> tape;
    const auto loss = train::detection_loss(tape, tape.leaf(h, true), targets, k1, rng);
    CHECK(loss.cls == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("mined negatives are diluted over K") {
    auto h = perfect_header(targets);
    h.at(0, 0, 0) = 0.0;
    auto k2 = cfg;
    k2.hard_k = 2;  // second-worst negative is softplus(-30) = about 0
    te::Tape<double> tape;
    const auto loss = train::detection_loss(tape, tape.leaf(h, true), targets, k2, rng);
    CHECK(loss.cls == doctest::Approx(std::log(2.0) / 2.0).epsilon(1e-9));
  }
  SUBCASE("regression averages over the positives") {
    const auto two = train::assign_targets(
        {make_label(1, ClassId::Vehicle, -13.0, -13.0, 0.3, 4.8, 2.0),
         make_label(2, ClassId::Vehicle, -10.5, -10.5, 0.0, 4.8, 2.0)},
        anchors, Pose2{});
    REQUIRE(two.positives[0].size() == 2);
    auto h = perfect_header(two);
    const auto& p0 = two.positives[0][0];
    h.at(1, p0.cell / 8, p0.cell % 8) += 0.5;
    te::Tape<double> tape;
    const auto loss = train::detection_loss(tape, tape.leaf(h, true), two, cfg, rng);
    CHECK(loss.reg == doctest::Approx(0.125 / 2.0));
  }
}

TEST_CASE("detection_loss gradient against finite differences") {
  const auto anchors = small_anchors(6, 6);
  train::TrainConfig cfg;
  const auto targets = train::assign_targets(
      {make_label(1, ClassId::Vehicle, -13.0, -13.0, 0.3, 4.8, 2.0),
       make_label(2, ClassId::Pedestrian, -14.0, -12.0, 0.0, 0.6, 0.6),
       make_label(3, ClassId::Cyclist, -12.0, -14.0, 1.0, 1.8, 0.6)},
      anchors, Pose2{});
  std::mt19937_64 init(3);
  const auto h0 = te::random_tensor<double>({net::HeaderLayout::kChannels, 6, 6}, init);

  auto f = [&](const std::vector<te::Tensor<double>>& xs) {
    te::Tape<double> tape;
    std::mt19937_64 rng(7);
    const int hv = tape.leaf(xs[0], true);
    return tape.val(train::detection_loss(tape, hv, targets, cfg, rng).var).data[0];
  };
  auto analytic = [&](const std::vector<te::Tensor<double>>& xs) {
    te::Tape<double> tape;
    std::mt19937_64 rng(7);
    const int hv = tape.leaf(xs[0], true);
    tape.backward(train::detection_loss(tape, hv, targets, cfg, rng).var);
    return std::vector<te::Tensor<double>>{tape.grad(hv)};
  };
  const auto rep = te::grad_check<double>(f, {h0}, analytic, 1e-6);
  CHECK(rep.max_rel_err < 1e-5);
  CHECK(rep.checked == 17 * 36);
}

TEST_CASE("pedestrian positives leave the dimension channels untouched") {
  const auto anchors = small_anchors(6, 6);
  train::TrainConfig cfg;
  const auto targets = train::assign_targets(
      {make_label(1, ClassId::Pedestrian, -13.0, -13.0, 0.0, 0.6, 0.6)}, anchors, Pose2{});
  REQUIRE(targets.positives[static_cast<size_t>(ClassId::Pedestrian)].size() == 1);
  const auto& pos = targets.positives[static_cast<size_t>(ClassId::Pedestrian)][0];
  auto h = perfect_header(targets);
  // garbage in the would-be dims/heading channels must not cost anything
  for (int ch = 16; ch <= 16; ++ch) h.at(ch, pos.cell / 6, pos.cell % 6) += 5.0;
  te::Tape<double> tape;
  const int hv = tape.leaf(h, true);
  std::mt19937_64 rng(1);
  const auto loss = train::detection_loss(tape, hv, targets, cfg, rng);
  CHECK(loss.reg == doctest::Approx(5.0 - 0.5));  // only the dy channel counts
  tape.backward(loss.var);
  const auto& g = tape.grad(hv);
  // gradients exist for [score, dx, dy] = channels 14..16 only at the cell
  CHECK(g.at(14, pos.cell / 6, pos.cell % 6) != 0.0);
  CHECK(g.at(16, pos.cell / 6, pos.cell % 6) != 0.0);
  for (int ch = 1; ch <= 6; ++ch) CHECK(g.at(ch, pos.cell / 6, pos.cell % 6) == 0.0);
}

TEST_CASE("training on a short scenario") {
  auto scn_cfg = sim::preset_scenario("occlusion_alley");
  const auto data = sim::generate_scenario(scn_cfg);
  const auto net_cfg = net::NetConfig::tiny();
  train::TrainConfig cfg;

  SUBCASE("two trainers from the same seeds stay bit-identical") {
    train::Trainer<float> a(net_cfg, cfg, net::init_weights(net_cfg, 2));
    train::Trainer<float> b(net_cfg, cfg, net::init_weights(net_cfg, 2));
    for (int s = 0; s < 2; ++s) {
      const auto ta = a.train_sequence(data, s);
      const auto tb = b.train_sequence(data, s);
      CHECK(ta.total == tb.total);
      CHECK(ta.reg == tb.reg);
      CHECK(ta.cls == tb.cls);
    }
    for (const auto& [k, t] : a.weights().tensors) {
      CHECK(b.weights().tensors.at(k).data == t.data);
    }
  }

  SUBCASE("the loss decreases over the first steps") {
    train::Trainer<float> tr(net_cfg, cfg, net::init_weights(net_cfg, 2));
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 12; ++s) {
      const auto trace = tr.train_sequence(data, s);
      if (s == 0) first = trace.total;
      last = trace.total;
    }
    CHECK(last < first / 3.0);
  }

  SUBCASE("sequences shorter than the window are rejected") {
    auto short_cfg = scn_cfg;
    short_cfg.duration_s = 0.2;  // 20 packets < 50
    const auto short_data = sim::generate_scenario(short_cfg);
    train::Trainer<float> tr(net_cfg, cfg, net::init_weights(net_cfg, 2));
    CHECK_THROWS_AS(tr.train_sequence(short_data, 0), std::invalid_argument);
  }
}

TEST_CASE("the occlusion scenario supervises zero-return actors") {
  // The point of the spatial memory: some packets carry an in-region label
  // for an actor that produced no return in that packet.
  auto scn_cfg = sim::preset_scenario("occlusion_alley");
  const auto data = sim::generate_scenario(scn_cfg);
  const auto net_cfg = net::NetConfig::tiny();
  int zero_return_positives = 0;
  for (const auto& fr : data.frames) {
    const auto cells = bev::packet_cells(fr.packet, fr.packet.ego_pose, net_cfg.grid);
    const auto region = bev::compute_region(cells, net_cfg.halo, net_cfg.stride,
                                            net_cfg.grid.width, net_cfg.grid.height);
    if (!region) continue;
    net::AnchorGrid anchors;
    anchors.fused_region = region->at_scale(net::NetConfig::kFusedScale);
    anchors.origin_x = net_cfg.grid.origin_x;
    anchors.origin_y = net_cfg.grid.origin_y;
    anchors.resolution = net_cfg.fused_resolution();
    for (const auto& lab : fr.labels_at_emission) {
      const auto t = train::assign_targets({lab}, anchors, fr.packet.ego_pose);
      if (t.positives[static_cast<size_t>(lab.cls)].empty()) continue;
      const auto it = fr.returns_this_packet.find(lab.actor_id);
      if (it == fr.returns_this_packet.end() || it->second == 0) ++zero_return_positives;
    }
  }
  CHECK(zero_return_positives > 0);
}
