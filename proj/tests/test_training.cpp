#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "freqalign/checkpoint.hpp"
#include "gradcheck.hpp"

using namespace freqalign;

namespace {

struct Toy {
  ModelConfig model;
  SchedulerConfig schedule;
  TrainConfig train;
  DomainDataset source, target;
};

// 16x16 images, 8x8 grid with 8 channels.
Toy toy(std::uint64_t seed, int count = 48) {
  Toy t;
  t.model.input_size = 16;
  t.model.conv_channels = {4, 8};
  t.model.pool_blocks = 1;
  t.model.window = 4;
  t.model.hidden = 16;
  t.model.disc_hidden = 16;
  t.schedule.grid_cells = 64;
  t.schedule.window = 4;
  t.schedule.bands = 3;
  t.schedule.interval = 2;
  t.schedule.warmup_end = 4;
  t.schedule.radius = 1;
  t.schedule = t.schedule.resolved();
  t.train.batch = 6;
  t.train.crop = 16;
  t.train.seed = seed;
  t.source = generate_domain(seed, BaseContent::mixture,
                             {DistortionSpec::standard(DistortionFamily::gaussian_blur),
                              DistortionSpec::standard(DistortionFamily::block_average)},
                             count, 16);
  t.target = generate_domain(seed + 100, BaseContent::mixture, DistortionSpec::standard(DistortionFamily::additive_noise),
                             count, 16, DomainRole::target);
  return t;
}

std::vector<LogRow> run_rows(Trainer& tr, int steps) {
  std::vector<LogRow> rows;
  for (int i = 0; i < steps && !tr.scheduler().complete(); ++i) rows.push_back(tr.train_step().row);
  return rows;
}

bool same_rows(const std::vector<LogRow>& a, const std::vector<LogRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::ostringstream x, y;
    write_log_row(x, a[i]);
    write_log_row(y, b[i]);
    if (x.str() != y.str()) return false;
  }
  return true;
}

}  // namespace

TEST(AdversarialLoss, ValuesMatchMetric) {
  const std::vector<double> half(3, 0.5);
  EXPECT_NEAR(adversarial_loss(half, half), 2 * std::log(2.0), 1e-12);
  const std::vector<double> s{0.2, 0.6}, t{0.7, 0.1, 0.4};
  EXPECT_NEAR(adversarial_loss(s, t), adv_metric(s, t), 1e-12);
}

TEST(AdversarialLoss, LogitGradient) {
  Vector z(5);
  z << 0.3, -1.2, 2.0, 0.1, -0.4;
  const LossGrad g = adversarial_loss_grad(z, 2);
  const double h = 1e-6;
  for (int i = 0; i < 5; ++i) {
    Vector zp = z, zm = z;
    zp(i) += h;
    zm(i) -= h;
    const double fd = (adversarial_loss_grad(zp, 2).value - adversarial_loss_grad(zm, 2).value) / (2 * h);
    EXPECT_NEAR(g.grad(i, 0), fd, 1e-8);
  }
}

TEST(AdversarialLoss, ExtractorGradientIsReversed) {
  // only L_adv active: extractor gradients must equal -lambda times the plain derivative
  std::mt19937_64 rng(3);
  Model model(oracle::tiny_model_config(), 3);
  const DomainBatch b = oracle::random_batch(rng, 4, 8);
  TrainConfig tc;
  tc.w_source = 0.0;
  const BandWindow w{make_trajectory(TrajectoryKind::zigzag, 4, 4), 3, 1};
  compute_gradients(model, b, w, tc, 1.0);
  nn::Param* p = model.extractor_parameters()[0];
  const Matrix analytic = p->grad;
  int opposite = 0, total = 0;
  for (Eigen::Index i = 0; i < p->value.size(); i += 3) {
    const double saved = p->value.data()[i];
    p->value.data()[i] = saved + 1e-5;
    const double up = compute_gradients(model, b, w, tc, 1.0).losses.adversarial;
    p->value.data()[i] = saved - 1e-5;
    const double dn = compute_gradients(model, b, w, tc, 1.0).losses.adversarial;
    p->value.data()[i] = saved;
    const double fd = (up - dn) / 2e-5;
    if (std::abs(fd) < 1e-7) continue;
    ++total;
    if (analytic.data()[i] * fd < 0) ++opposite;
    EXPECT_LT(oracle::relative_error(analytic.data()[i], -fd, 1e-6), 1e-4);
  }
  EXPECT_GT(total, 5);
  EXPECT_EQ(opposite, total);
}

TEST(RegressionLoss, Examples) {
  RegressionOutput out;
  out.scores = Vector::Constant(1, 3.0);
  const Vector centers = bin_centers(5);
  EXPECT_EQ(regression_loss(out, std::vector<double>{3.0}, RegressionLossKind::mse, centers).value, 0.0);
  EXPECT_EQ(regression_loss(out, std::vector<double>{5.0}, RegressionLossKind::mse, centers).value, 4.0);
  std::mt19937_64 rng(4);
  Model model(oracle::tiny_model_config(), 4);
  const RegressionOutput r = model.regress(oracle::random_matrix(rng, 7, 12));
  std::vector<double> truth{1.0, 2.5, 3.1, 4.9, 5.0, 1.7, 3.3};
  for (auto kind : {RegressionLossKind::mse, RegressionLossKind::cross_entropy}) {
    double mean = 0.0;
    for (int i = 0; i < 7; ++i) {
      RegressionOutput one;
      one.probs = r.probs.row(i);
      one.scores = r.scores.segment(i, 1);
      mean += regression_loss(one, std::span(truth).subspan(i, 1), kind, centers).value / 7.0;
    }
    EXPECT_NEAR(regression_loss(r, truth, kind, centers).value, mean, 1e-9);
  }
}

TEST(RegressionLoss, DiscretizedTargetsSumToOne) {
  const Matrix q = discretize_scores(std::vector<double>{1.0, 2.25, 5.0, 4.5}, bin_centers(5));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(q.row(i).sum(), 1.0, 1e-15);
  EXPECT_EQ(q(0, 0), 1.0);
  EXPECT_NEAR(q(1, 1), 0.75, 1e-15);
  EXPECT_EQ(q(2, 4), 1.0);
}

TEST(EntropyLoss, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(5);
  const Matrix logits = oracle::random_matrix(rng, 3, 5);
  const LossGrad g = entropy_loss(softmax(logits));
  // g.grad is w.r.t. logits
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    Matrix lp = logits, lm = logits;
    lp.data()[i] += 1e-6;
    lm.data()[i] -= 1e-6;
    const double fd = (entropy_loss(softmax(lp)).value - entropy_loss(softmax(lm)).value) / 2e-6;
    EXPECT_NEAR(g.grad.data()[i], fd, 1e-8);
  }
}

TEST(Training, FullObjectiveGradientCheck) {
  const auto r = oracle::check_objective_gradients(7, 5);
  EXPECT_LT(r.max_relative, 1e-4) << r.worst;
  EXPECT_LE(r.skipped * 10, r.checked);
}

TEST(Training, AdversarialStepDirection) {
  // one small step with only L_adv: D lowers it, the reversed G update raises it
  std::mt19937_64 rng(8);
  Model base(oracle::tiny_model_config(), 8);
  const DomainBatch b = oracle::random_batch(rng, 6, 8);
  TrainConfig tc;
  tc.w_source = 0.0;
  const BandWindow w{make_trajectory(TrajectoryKind::zigzag, 4, 4), 3, 0};
  const double before = compute_gradients(base, b, w, tc, 1.0).losses.adversarial;
  auto step_on = [&](std::vector<nn::Param*> ps) {
    for (auto* p : ps) p->value -= 1e-3 * p->grad;
  };
  Model d_only = base, g_only = base;
  compute_gradients(d_only, b, w, tc, 1.0);
  step_on(d_only.discriminator_parameters());
  compute_gradients(g_only, b, w, tc, 1.0);
  step_on(g_only.extractor_parameters());
  EXPECT_LT(compute_gradients(d_only, b, w, tc, 1.0).losses.adversarial, before);
  EXPECT_GE(compute_gradients(g_only, b, w, tc, 1.0).losses.adversarial, before);
}

TEST(Training, ZeroAlignmentWeightsReduceToSupervised) {
  Toy t = toy(11);
  TrainConfig zero = t.train;
  zero.w_adv = 0.0;
  zero.w_target = 0.0;
  zero.target_loss = TargetLossKind::entropy;
  TrainConfig supervised = t.train;
  supervised.source_only = true;
  supervised.target_loss = TargetLossKind::entropy;
  Trainer a(t.model, t.schedule, zero, t.source, t.target), b(t.model, t.schedule, supervised, t.source, t.target);
  const auto ra = run_rows(a, 1000), rb = run_rows(b, 1000);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].losses.source, rb[i].losses.source) << i;
    EXPECT_EQ(ra[i].losses.total, rb[i].losses.total) << i;
    EXPECT_EQ(ra[i].band, rb[i].band) << i;
  }
  EXPECT_EQ(a.model().parameter_hash(), b.model().parameter_hash());
}

TEST(Training, WarmupMeasuresBandZero) {
  Toy t = toy(12);
  Trainer tr(t.model, t.schedule, t.train, t.source, t.target);
  for (int s = 0; s < t.schedule.warmup_end; ++s) {
    Model copy = tr.model();
    const ForwardPass fp = compute_gradients(copy, tr.sampler().batch(s), tr.window(0), t.train, 1.0);
    const double expected = measure_transferability(MetricKind::mmd, fp);
    const LogRow row = tr.train_step().row;
    EXPECT_EQ(row.band, 0);
    EXPECT_EQ(row.phase, Phase::warmup);
    EXPECT_EQ(row.epsilon, expected);
  }
}

TEST(Training, MeasurementLeavesParametersUntouched) {
  Toy t = toy(13);
  Model model(t.model, 13);
  PairedSampler sampler(t.source, t.target, 6, 16, 13);
  const BandWindow w{make_trajectory(TrajectoryKind::zigzag, 8, 8), 4, 0};
  const ForwardPass fp = compute_gradients(model, sampler.batch(0), w, t.train, 1.0);
  const auto h = model.parameter_hash();
  for (auto kind : {MetricKind::mmd, MetricKind::coral, MetricKind::adversarial}) measure_transferability(kind, fp);
  EXPECT_EQ(model.parameter_hash(), h);
}

TEST(Training, ReplayProducesIdenticalTraces) {
  Toy t = toy(14);
  Trainer a(t.model, t.schedule, t.train, t.source, t.target), b(t.model, t.schedule, t.train, t.source, t.target);
  EXPECT_TRUE(same_rows(run_rows(a, 1000), run_rows(b, 1000)));
}

TEST(Training, TinyRunBookkeeping) {
  Toy t = toy(15);
  t.schedule.bands = 2;
  t.schedule.movement_end = 0;
  t.schedule.total = 0;
  t.schedule = t.schedule.resolved();
  Trainer tr(t.model, t.schedule, t.train, t.source, t.target);
  tr.run();
  EXPECT_EQ(static_cast<int>(tr.log().size()), t.schedule.total);
  int movement = 0;
  for (const auto& r : tr.log()) movement += r.phase == Phase::movement;
  EXPECT_EQ(movement, t.schedule.bands * t.schedule.interval);
  EXPECT_GE(tr.scheduler().j_star(), 0);
  EXPECT_THROW(tr.train_step(), StateError);
}

TEST(Training, CheckpointResumeReplaysTrace) {
  Toy t = toy(16);
  const auto path = std::filesystem::temp_directory_path() / "freqalign_test_resume.ckpt";
  Trainer whole(t.model, t.schedule, t.train, t.source, t.target);
  run_rows(whole, 7);
  save_checkpoint(path, whole);
  const auto tail = run_rows(whole, 1000);

  Trainer resumed(t.model, t.schedule, t.train, t.source, t.target);
  resume_from(load_checkpoint(path), resumed);
  EXPECT_EQ(resumed.scheduler().iteration(), 7);
  EXPECT_TRUE(same_rows(run_rows(resumed, 1000), tail));
  EXPECT_EQ(resumed.model().parameter_hash(), whole.model().parameter_hash());
  std::filesystem::remove(path);
}

TEST(Training, CheckpointRejectsMismatchAndMissing) {
  Toy t = toy(17);
  const auto path = std::filesystem::temp_directory_path() / "freqalign_test_mismatch.ckpt";
  Trainer tr(t.model, t.schedule, t.train, t.source, t.target);
  run_rows(tr, 3);
  save_checkpoint(path, tr);
  Toy other = toy(17);
  other.model.hidden = 8;
  Trainer wrong(other.model, other.schedule, other.train, other.source, other.target);
  EXPECT_THROW(resume_from(load_checkpoint(path), wrong), ConfigError);
  EXPECT_THROW(load_checkpoint(path.string() + ".missing"), DataError);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
}

TEST(Training, CheckpointStateRoundTrip) {
  Toy t = toy(18);
  const auto path = std::filesystem::temp_directory_path() / "freqalign_test_state.ckpt";
  Trainer tr(t.model, t.schedule, t.train, t.source, t.target);
  run_rows(tr, 9);
  save_checkpoint(path, tr);
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(to_json(ck.state), to_json(tr.scheduler().state()));
  EXPECT_EQ(ck.adam_steps, 9);
  Model m = load_model(ck);
  EXPECT_EQ(m.parameter_hash(), tr.model().parameter_hash());
  std::filesystem::remove(path);
}

TEST(Training, WarmupLossDecreasesOnToyTask) {
  std::vector<double> ratio;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Toy t = toy(seed, 96);
    t.schedule.warmup_end = 120;
    t.schedule.movement_end = 0;
    t.schedule.total = 0;
    t.schedule = t.schedule.resolved();
    t.train.augment = false;
    Trainer tr(t.model, t.schedule, t.train, t.source, t.target);
    const auto rows = run_rows(tr, 120);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 20; ++i) {
      first += rows[i].losses.total;
      last += rows[rows.size() - 1 - i].losses.total;
    }
    ratio.push_back(last / first);
  }
  std::sort(ratio.begin(), ratio.end());
  EXPECT_LT(ratio[2], 1.0);
}

TEST(Training, RejectsMismatchedInputs) {
  Toy t = toy(19);
  EXPECT_THROW(Trainer(t.model, t.schedule, t.train, t.target, t.target), DataError);
  TrainConfig bad = t.train;
  bad.crop = 12;
  EXPECT_THROW(Trainer(t.model, t.schedule, bad, t.source, t.target), ConfigError);
  SchedulerConfig s = t.schedule;
  s.window = 5;
  EXPECT_THROW(Trainer(t.model, s.resolved(), t.train, t.source, t.target), ConfigError);
}

TEST(Training, NonFiniteLossAborts) {
  Toy t = toy(20);
  Trainer tr(t.model, t.schedule, t.train, t.source, t.target);
  DomainBatch b = tr.sampler().batch(0);
  b.source_scores[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    tr.train_step(b);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos) << e.what();
  }
}

TEST(Training, LogFormat) {
  std::ostringstream os;
  write_log_header(os);
  LogRow r;
  r.t = 3;
  r.phase = Phase::movement;
  r.band = 2;
  r.losses.source = 0.5;
  r.epsilon = 0.25;
  r.lr = 1e-3;
  write_log_row(os, r);
  EXPECT_EQ(os.str(), "t,phase,j,L_S,L_adv,L_T,epsilon,lr\n3,movement,2,0.5,0,0,0.25,0.001\n");
}
