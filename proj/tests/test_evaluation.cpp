#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "freqalign/evaluation.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace freqalign;
namespace fs = std::filesystem;

TEST(Srocc, Examples) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(srocc(a, std::vector<double>{2, 4, 6, 8, 10}), 1.0);
  EXPECT_DOUBLE_EQ(srocc(a, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(srocc(a, std::vector<double>{1, 4, 9, 16, 25}), 1.0);
  EXPECT_EQ(average_ranks(std::vector<double>{3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_THROW(srocc(a, std::vector<double>{1, 1, 1, 1, 1}), NumericError);
  EXPECT_THROW(srocc(a, std::vector<double>{1, 2}), InvalidArgument);
}

TEST(Srocc, MatchesCountingOracleWithTies) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + static_cast<int>(rng() % 40);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng() % 7);
      y[i] = static_cast<double>(rng() % 11) + 0.5 * x[i];
    }
    EXPECT_NEAR(srocc(x, y), oracle::spearman(x, y), 1e-12);
    EXPECT_NEAR(srocc(x, y), srocc(y, x), 1e-15);
  }
}

TEST(Srocc, InvariantUnderMonotoneMaps) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> x(60), y(60), ex(60);
  for (int i = 0; i < 60; ++i) {
    x[i] = g(rng);
    y[i] = x[i] + g(rng);
    ex[i] = std::exp(2 * x[i]) + 7;
  }
  EXPECT_NEAR(srocc(x, y), srocc(ex, y), 1e-15);
  for (double v : {srocc(x, y)}) EXPECT_TRUE(v >= -1 && v <= 1);
}

TEST(Logistic, RecoversNoiseFreeCurve) {
  const LogisticParams truth_beta{3.0, 2.0, 0.5, 0.1, 3.0};
  std::vector<double> x, y;
  for (int i = 0; i < 80; ++i) {
    x.push_back(-2.0 + 5.0 * i / 79.0);
    y.push_back(logistic_map(truth_beta, x.back()));
  }
  const LogisticFit fit = logistic_fit(x, y);
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(fit.mse, 1e-10);
  EXPECT_NEAR(plcc(x, y), 1.0, 1e-9);
}

TEST(Logistic, MapAtCentre) {
  const LogisticParams b{4.0, 1.0, 2.0, 0.0, 1.0};
  EXPECT_DOUBLE_EQ(logistic_map(b, 2.0), 1.0);
  EXPECT_LT(logistic_map(b, 0.0), logistic_map(b, 4.0));
}

TEST(Logistic, LinearDataGivesUnitPlcc) {
  std::vector<double> x, y;
  for (int i = 0; i < 30; ++i) {
    x.push_back(i);
    y.push_back(1.0 + 0.1 * i);
  }
  EXPECT_NEAR(plcc(x, y), 1.0, 1e-9);
}

TEST(Srocc, TiesEqualPearsonOnAverageRanks) {
  const std::vector<double> pred{1, 2, 2, 3}, truth{1, 2, 3, 4};
  EXPECT_NEAR(srocc(pred, truth), pearson(std::vector<double>{1, 2.5, 2.5, 4}, std::vector<double>{1, 2, 3, 4}), 1e-15);
  EXPECT_NEAR(srocc(pred, truth), oracle::spearman(pred, truth), 1e-12);
}

TEST(Plcc, IdentityNegationAndNoise) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(1.0, 5.0);
  std::vector<double> truth(50);
  for (double& t : truth) t = u(rng);
  EXPECT_NEAR(plcc(truth, truth), 1.0, 1e-6);
  std::vector<double> neg(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) neg[i] = -truth[i];
  EXPECT_NEAR(plcc(neg, truth), 1.0, 1e-6);
  int small = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> noise(200), t(200);
    for (int i = 0; i < 200; ++i) {
      noise[i] = u(rng);
      t[i] = u(rng);
    }
    small += std::abs(plcc(noise, t)) < 0.25;
  }
  EXPECT_GE(small, 19);
}

TEST(Logistic, RejectsDegenerateInput) {
  EXPECT_THROW(logistic_fit(std::vector<double>{1, 1, 1, 1, 1}, std::vector<double>{1, 2, 3, 4, 5}), NumericError);
  EXPECT_THROW(logistic_fit(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), InvalidArgument);
}

TEST(Logistic, PlccBoundedOnNoisyData) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(40), y(40);
    for (int i = 0; i < 40; ++i) {
      x[i] = g(rng);
      y[i] = 3 + std::tanh(x[i]) + 0.3 * g(rng);
    }
    const double p = plcc(x, y);
    EXPECT_GE(p, -1.0);
    EXPECT_LE(p, 1.0);
    EXPECT_GT(p, 0.0);
  }
}

TEST(Report, JsonRoundTrip) {
  std::vector<double> x{1, 2, 3, 4, 5, 6, 7}, y{1.2, 1.9, 3.3, 3.9, 5.2, 5.8, 7.1};
  EvalReport r = evaluate_predictions(x, y);
  r.band = 4;
  Matrix g(2, 3);
  g << 0.1, 0.2, 0.3, 0.4, 0.5, -0.6;
  r.grid = g;
  r.grid_converged = std::vector<int>{1, 0, 1, 1, 1, 1};
  const EvalReport back = report_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(back.srocc, r.srocc);
  EXPECT_EQ(back.plcc, r.plcc);
  EXPECT_EQ(back.beta, r.beta);
  EXPECT_EQ(back.n, 7);
  EXPECT_EQ(back.band, 4);
  EXPECT_EQ(*back.grid, g);
  EXPECT_EQ(*back.grid_converged, *r.grid_converged);
}

TEST(Report, HeatmapAndCsv) {
  const fs::path dir = fs::temp_directory_path() / "freqalign_eval_out";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Matrix m(2, 2);
  m << 0.0, 0.5, 1.0, 0.25;
  write_heatmap_ppm(dir / "h.ppm", m, 4);
  EXPECT_EQ(fs::file_size(dir / "h.ppm"), std::string("P6\n8 8\n255\n").size() + 8 * 8 * 3);
  const Image img = read_netpbm(dir / "h.ppm");
  EXPECT_EQ(img.rows, 8);
  write_matrix_csv(dir / "m.csv", m);
  std::ifstream is(dir / "m.csv");
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "0,0.5");
  fs::remove_all(dir);
}

namespace {

ModelConfig sweep_model() {
  ModelConfig m = oracle::tiny_model_config();
  m.input_size = 16;
  m.conv_channels = {4, 6};
  return m;
}

}  // namespace

TEST(Sweep, SharedGridShapeRangeAndDeterminism) {
  const auto s = generate_domain(1, BaseContent::mixture, DistortionSpec::standard(DistortionFamily::gaussian_blur), 24, 16);
  const auto t = generate_domain(2, BaseContent::mixture, DistortionSpec::standard(DistortionFamily::block_average),
                                 24, 16, DomainRole::target);
  SweepConfig cfg;
  cfg.pretrain_steps = 10;
  cfg.head_steps = 30;
  cfg.head_hidden = 8;
  const SweepResult a = frequency_sweep(s, t, sweep_model(), cfg, 8);
  const SweepResult b = frequency_sweep(s, t, sweep_model(), cfg, 8);
  ASSERT_EQ(a.grid.rows(), 8);
  ASSERT_EQ(a.grid.cols(), 8);
  EXPECT_EQ(a.grid, b.grid);
  EXPECT_EQ(a.converged.size(), 64u);
  for (Eigen::Index i = 0; i < a.grid.size(); ++i) {
    EXPECT_GE(a.grid.data()[i], -1.0);
    EXPECT_LE(a.grid.data()[i], 1.0);
  }
}

TEST(Sweep, IndependentModeRuns) {
  ModelConfig mc = sweep_model();
  mc.input_size = 8;
  mc.conv_channels = {2, 2};
  SweepConfig cfg;
  cfg.mode = SweepMode::independent;
  cfg.pretrain_steps = 2;
  const auto s8 = generate_domain(3, BaseContent::mixture, DistortionSpec::standard(DistortionFamily::gaussian_blur), 12, 8);
  const auto t8 = generate_domain(4, BaseContent::mixture, DistortionSpec::standard(DistortionFamily::additive_noise),
                                  12, 8, DomainRole::target);
  const SweepResult r = frequency_sweep(s8, t8, mc, cfg, 4);
  EXPECT_EQ(r.grid.rows(), 4);
  EXPECT_TRUE(r.grid.allFinite());
  EXPECT_THROW(parse_sweep_mode("random"), InvalidArgument);
}
