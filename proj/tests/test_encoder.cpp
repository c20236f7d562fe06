#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "oracle.hpp"
#include "qffn/encoder.hpp"
#include "qffn/serialization.hpp"

namespace {

using qffn::EncoderModel;
using qffn::FfnKind;
using qffn::Matrix;
using qffn::ModelConfig;
using qffn::TokenBatch;

ModelConfig micro(FfnKind kind, int pqc_layers = 1) {
  ModelConfig c;
  c.vocab_size = 20;
  c.hidden = 16;
  c.num_layers = 2;
  c.num_heads = 1;
  c.intermediate = 32;
  c.max_seq_len = 6;
  c.ffn_kind = kind;
  c.pqc_layers = pqc_layers;
  c.num_classes = 2;
  return c;
}

// Scales every weight up so gradients are well above finite-difference noise.
EncoderModel spread(EncoderModel m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.4);
  qffn::for_each_tensor(m, [&](const std::string& name, Matrix& t) {
    if (name.find("theta") != std::string::npos) return;
    for (auto& v : t.flat()) v += g(rng);
  });
  return m;
}

TokenBatch micro_batch() {
  TokenBatch b;
  b.batch = 3;
  b.seq = 6;
  b.ids = {2, 5, 9, 13, 3, 0,  //
           2, 7, 7, 3, 0, 0,   //
           2, 19, 4, 11, 8, 3};
  b.mask = {1, 1, 1, 1, 1, 0,  //
            1, 1, 1, 1, 0, 0,  //
            1, 1, 0, 1, 1, 1};
  return b;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

TEST(Encoder, MicroParamCountByHand) {
  // tok 20·16 + pos 6·16 + emb LN 32
  // per layer: attention 4·(256+16) + LN 64 + FFN 16·32+32+32·16+16 = 2224
  // head 2·16+2
  const auto c = micro(FfnKind::Classical);
  EXPECT_EQ(qffn::model_param_count(c), 320u + 96u + 32u + 2u * 2224u + 34u);
  EXPECT_EQ(qffn::model_param_count(c), 4930u);
  EXPECT_EQ(qffn::count_parameters(qffn::init_model(c, 1)), 4930u);
  for (auto kind : {FfnKind::Qffn, FfnKind::VanillaQffn}) {
    const auto q = micro(kind, 2);
    EXPECT_EQ(qffn::count_parameters(qffn::init_model(q, 1)), qffn::model_param_count(q));
  }
}

TEST(Encoder, FullSizeParamCount) {
  ModelConfig c;  // 30522 vocab, 2 heads, 512 inner, 2 classes
  const auto classical = qffn::model_param_count(c);
  EXPECT_EQ(classical, 4320258u);
  EXPECT_LE(std::abs(static_cast<double>(classical) - 4.40e6) / 4.40e6, 0.02);
  c.ffn_kind = FfnKind::Qffn;
  c.pqc_layers = 4;
  EXPECT_EQ(classical - qffn::model_param_count(c), 2u * (131712u - 1188u));
}

TEST(Encoder, KindSwapTouchesOnlyFfnTensors) {
  auto shapes = [](const EncoderModel& m) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> out;
    qffn::for_each_tensor(m, [&](const std::string& n, const Matrix& t) {
      if (n.find("ffn.") == std::string::npos) out[n] = {t.rows(), t.cols()};
    });
    return out;
  };
  const auto a = shapes(qffn::make_zero_model(micro(FfnKind::Classical)));
  EXPECT_EQ(a, shapes(qffn::make_zero_model(micro(FfnKind::Qffn))));
  EXPECT_EQ(a, shapes(qffn::make_zero_model(micro(FfnKind::VanillaQffn))));
}

TEST(Encoder, PqcLayersValidation) {
  auto c = micro(FfnKind::Qffn, 0);
  EXPECT_THROW(qffn::validate(c), qffn::ConfigError);
  c = micro(FfnKind::Classical);
  c.num_heads = 3;
  EXPECT_THROW(qffn::validate(c), qffn::ConfigError);
}

TEST(Encoder, LogitShapeAndSoftmax) {
  auto c = micro(FfnKind::Qffn);
  c.max_seq_len = 8;
  const auto m = qffn::init_model(c, 3);
  TokenBatch b;
  b.batch = 2;
  b.seq = 8;
  b.ids = {2, 4, 5, 6, 7, 8, 9, 3, 2, 10, 11, 3, 0, 0, 0, 0};
  b.mask = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
  const auto logits = qffn::model_forward(m, b);
  EXPECT_EQ(logits.rows(), 2u);
  EXPECT_EQ(logits.cols(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    const auto p = qffn::softmax(logits.row(r));
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
  }
}

TEST(Encoder, EqualRowsGiveEqualLogits) {
  const auto m = spread(qffn::init_model(micro(FfnKind::Classical), 4), 1);
  TokenBatch b;
  b.batch = 3;
  b.seq = 4;
  b.ids = {2, 8, 9, 3, 2, 8, 9, 3, 2, 8, 9, 3};
  b.mask.assign(12, 1);
  const auto logits = qffn::model_forward(m, b);
  for (std::size_t r = 1; r < 3; ++r) {
    EXPECT_EQ(logits(r, 0), logits(0, 0));
    EXPECT_EQ(logits(r, 1), logits(0, 1));
  }
}

TEST(Encoder, InputErrors) {
  const auto m = qffn::init_model(micro(FfnKind::Classical), 5);
  TokenBatch b;
  b.batch = 1;
  b.seq = 3;
  b.ids = {2, 25, 3};
  b.mask = {1, 1, 1};
  EXPECT_THROW(qffn::model_forward(m, b), std::exception);
  b.ids = {2, 4, 3};
  b.mask = {1, 1};
  EXPECT_THROW(qffn::model_forward(m, b), qffn::ShapeError);
  b.batch = 1;
  b.seq = 7;
  b.ids.assign(7, 4);
  b.mask.assign(7, 1);
  EXPECT_THROW(qffn::model_forward(m, b), std::exception);
}

TEST(Encoder, LayerNormStatistics) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(3.0, 5.0);
  Matrix x(10, 32);
  for (auto& v : x.flat()) v = g(rng);
  const auto y = qffn::layer_norm(x, Matrix(1, 32, 1.0), Matrix(1, 32, 0.0));
  for (std::size_t r = 0; r < 10; ++r) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(r)) mean += v;
    mean /= 32;
    for (double v : y.row(r)) var += (v - mean) * (v - mean);
    var /= 32;
    EXPECT_LE(std::abs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Encoder, AttentionRowsAreDistributions) {
  const auto m = spread(qffn::init_model(micro(FfnKind::Classical), 7), 2);
  const std::vector<int> ids{2, 5, 6, 7, 8, 3};
  const std::vector<int> mask{1, 1, 0, 1, 0, 1};
  const auto cache = qffn::forward_sequence(m, ids, mask);
  for (const auto& layer : cache.layers) {
    for (const auto& p : layer.probs) {
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
          EXPECT_GE(p(r, c), 0.0);
          s += p(r, c);
          if (mask[c] == 0) {
            EXPECT_LE(p(r, c), 1e-12);
          }
        }
        EXPECT_NEAR(s, 1.0, 1e-10);
      }
    }
  }
}

TEST(Encoder, TrailingPaddingDoesNotChangeLogits) {
  const auto m = spread(qffn::init_model(micro(FfnKind::Qffn), 8), 3);
  const auto a = qffn::forward_sequence(m, std::vector<int>{2, 5, 3}, std::vector<int>{1, 1, 1});
  const auto b = qffn::forward_sequence(m, std::vector<int>{2, 5, 3, 0, 0, 0},
                                        std::vector<int>{1, 1, 1, 0, 0, 0});
  EXPECT_EQ(a.logits, b.logits);
}

TEST(Encoder, SaturatedPredictionHasNearZeroGradient) {
  auto m = qffn::init_model(micro(FfnKind::Classical), 9);
  m.classifier_b(0, 1) = 60.0;
  const auto batch = micro_batch();
  const std::vector<int> labels{1, 1, 1};
  const auto out = qffn::model_backward(m, batch, labels);
  EXPECT_LE(out.loss, 1e-20);
  qffn::for_each_tensor(out.grads, [](const std::string& name, const Matrix& t) {
    for (double v : t.flat()) EXPECT_LE(std::abs(v), 1e-20) << name;
  });
}

class MicroGradient : public ::testing::TestWithParam<std::pair<FfnKind, int>> {};

TEST_P(MicroGradient, MatchesFiniteDifferences) {
  const auto [kind, layers] = GetParam();
  const auto m = spread(qffn::init_model(micro(kind, layers), 10), 11);
  const auto batch = micro_batch();
  const std::vector<int> labels{0, 1, 1};
  const auto out = qffn::model_backward(m, batch, labels);

  auto loss_of = [&](const EncoderModel& model) {
    const auto logits = qffn::model_forward(model, batch);
    double s = 0.0;
    for (std::size_t r = 0; r < batch.batch; ++r) {
      s += qffn::cross_entropy(logits.row(r), static_cast<std::size_t>(labels[r]));
    }
    return s / static_cast<double>(batch.batch);
  };
  EXPECT_NEAR(out.loss, loss_of(m), 1e-12);

  std::vector<Matrix*> params;
  std::vector<const Matrix*> grads;
  std::vector<std::string> names;
  auto copy = m;
  qffn::for_each_tensor(copy, [&](const std::string& n, Matrix& t) {
    params.push_back(&t);
    names.push_back(n);
  });
  qffn::for_each_tensor(out.grads, [&](const std::string&, const Matrix& t) { grads.push_back(&t); });

  std::size_t checked = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->storage();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double saved = p[k];
      p[k] = saved + 1e-5;
      const double up = loss_of(copy);
      p[k] = saved - 1e-5;
      const double down = loss_of(copy);
      p[k] = saved;
      const double fd = (up - down) / 2e-5;
      const double err = rel_err(grads[i]->flat()[k], fd);
      worst = std::max(worst, err);
      EXPECT_LE(err, 1e-4) << names[i] << "[" << k << "] analytic " << grads[i]->flat()[k]
                           << " fd " << fd;
      ++checked;
    }
  }
  EXPECT_EQ(checked, qffn::count_parameters(m));
  RecordProperty("worst_relative_error", std::to_string(worst));
}

INSTANTIATE_TEST_SUITE_P(AllKinds, MicroGradient,
                         ::testing::Values(std::pair{FfnKind::Classical, 1},
                                           std::pair{FfnKind::Qffn, 1},
                                           std::pair{FfnKind::Qffn, 2},
                                           std::pair{FfnKind::VanillaQffn, 2}),
                         [](const auto& info) {
                           return std::string(qffn::to_string(info.param.first)) + "_L" +
                                  std::to_string(info.param.second);
                         });

TEST(Encoder, WeightArchiveRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "qffn_test_weights";
  std::filesystem::create_directories(dir);
  for (auto kind : {FfnKind::Classical, FfnKind::Qffn, FfnKind::VanillaQffn}) {
    const auto m = qffn::init_model(micro(kind, 2), 12);
    qffn::save_weights(m, dir / "w.bin", dir / "w.json");
    const auto loaded = qffn::load_weights(dir / "w.bin", dir / "w.json");
    EXPECT_EQ(qffn::count_parameters(loaded), qffn::count_parameters(m));
    // Values come back as the float32 they were stored as.
    std::vector<const Matrix*> a, b;
    qffn::for_each_tensor(m, [&](const std::string&, const Matrix& t) { a.push_back(&t); });
    qffn::for_each_tensor(loaded, [&](const std::string&, const Matrix& t) { b.push_back(&t); });
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t k = 0; k < a[i]->size(); ++k) {
        EXPECT_EQ(static_cast<double>(static_cast<float>(a[i]->flat()[k])), b[i]->flat()[k]);
      }
    }
    // Second save of the loaded model is byte-identical.
    const auto first = qffn::pack_weights(m);
    const auto second = qffn::pack_weights(loaded);
    EXPECT_EQ(first.blob, second.blob);
    EXPECT_EQ(first.manifest, second.manifest);
  }
  std::filesystem::remove_all(dir);
}

TEST(Encoder, WeightArchiveRejectsTruncation) {
  auto a = qffn::pack_weights(qffn::init_model(micro(FfnKind::Classical), 13));
  a.blob.resize(a.blob.size() - 4);
  EXPECT_THROW(qffn::unpack_weights(a), qffn::IoError);
}

}  // namespace
