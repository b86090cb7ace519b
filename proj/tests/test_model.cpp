#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "polyavsr/classifier.hpp"
#include "polyavsr/decoder.hpp"
#include "polyavsr/frontends.hpp"
#include "polyavsr/grad_check.hpp"
#include "polyavsr/losses.hpp"
#include "polyavsr/model.hpp"
#include "polyavsr/ops.hpp"
#include "polyavsr/prompt_encoder.hpp"

using namespace polyavsr;
using testing_util::randn;

namespace {

ModelConfig small_cfg() {
  ModelConfig c;
  c.d_model = 8;
  c.prompt_count = 2;
  c.encoder_layers = 2;
  c.encoder_heads = 2;
  c.ff_mult = 2;
  c.decoder_layers = 1;
  c.decoder_heads = 2;
  c.audio_channels = 4;
  c.video_channels = 3;
  c.frame_height = 4;
  c.frame_width = 4;
  c.vocab_size = 12;
  c.num_languages = 2;
  c.dtype = DType::f64;
  return c;
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.to_vector() == b.to_vector();
}

std::vector<Tensor> tensors(const std::vector<NamedTensor>& v) {
  std::vector<Tensor> out;
  for (const auto& n : v) out.push_back(n.tensor);
  return out;
}

Tensor probe(const Tensor& y, std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, randn(y.shape(), rng, false)));
}

}  // namespace

TEST_CASE("audio front") {
  ModelConfig cfg;
  cfg.dtype = DType::f64;
  ParamStore store(cfg.dtype, 1);
  AudioFront af(store, cfg);
  std::mt19937_64 rng(1);
  CHECK(af.forward(randn({64}, rng, false)).shape() == Shape{16, 32});
  CHECK_THROWS_AS(af.forward(randn({63}, rng, false)), AlignmentError);

  // Zero signal and zero biases give zero output.
  for (auto& p : store.params())
    if (p.name.find("bias") != std::string::npos) {
      Tensor t = p.tensor;
      for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, 0.0);
    }
  for (double v : af.forward(Tensor::zeros({64}, DType::f64)).to_vector()) CHECK(v == 0.0);

  // Nested-loop oracle: conv(k=stride=k_a) -> relu -> conv(k3, pad 1) -> transpose.
  auto x = randn({32}, rng, false);
  auto y = af.forward(x);
  auto w1 = store.find("audio_front.conv1.weight"), w2 = store.find("audio_front.conv2.weight");
  auto b1 = store.find("audio_front.conv1.bias"), b2 = store.find("audio_front.conv2.bias");
  const std::size_t T = 8, C1 = w1.dim(0), D = w2.dim(0), ka = 4;
  std::vector<double> h(C1 * T);
  for (std::size_t c = 0; c < C1; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      double s = b1.at(c);
      for (std::size_t k = 0; k < ka; ++k) s += w1.at(c * ka + k) * x.at(t * ka + k);
      h[c * T + t] = std::max(0.0, s);
    }
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t t = 0; t < T; ++t) {
      double s = b2.at(d);
      for (std::size_t c = 0; c < C1; ++c)
        for (std::size_t k = 0; k < 3; ++k) {
          const long p = static_cast<long>(t + k) - 1;
          if (p >= 0 && p < static_cast<long>(T)) s += w2.at((d * C1 + c) * 3 + k) * h[c * T + static_cast<std::size_t>(p)];
        }
      CHECK(std::abs(y.at(t * D + d) - s) < 1e-10);
    }
}

TEST_CASE("visual front") {
  ModelConfig cfg;
  cfg.dtype = DType::f64;
  ParamStore store(cfg.dtype, 2);
  VisualFront vf(store, cfg);
  std::mt19937_64 rng(2);
  auto frames = randn({16, 8, 8, 1}, rng, false);
  for (std::size_t i = 0; i < 64; ++i) frames.set(9 * 64 + i, frames.at(3 * 64 + i));
  auto y = vf.forward(frames);
  CHECK(y.shape() == Shape{16, 32});
  for (std::size_t d = 0; d < 32; ++d) CHECK(y.at(3 * 32 + d) == y.at(9 * 32 + d));
  CHECK_THROWS_AS(vf.forward(randn({2, 2, 2, 1}, rng, false)), DimensionError);

  ModelConfig sc = small_cfg();
  ParamStore s2(sc.dtype, 3);
  VisualFront small(s2, sc);
  auto f = randn({2, 4, 4, 1}, rng, false);
  auto k1 = s2.find("visual_front.conv1.weight");
  CHECK(grad_check([&] { return probe(small.forward(f)); }, {k1}, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("fusion") {
  ModelConfig cfg;
  cfg.dtype = DType::f64;
  ParamStore store(cfg.dtype, 3);
  Fusion fu(store, cfg);
  std::mt19937_64 rng(3);
  auto a = randn({16, 32}, rng, false), v = randn({16, 32}, rng, false);
  CHECK(fu.forward(a, v).shape() == Shape{16, 32});
  CHECK_FALSE(same_values(fu.forward(a, v), fu.forward(v, a)));
  auto z = Tensor::zeros({16, 32}, DType::f64);
  for (double x : fu.forward(z, z).to_vector()) CHECK(x == 0.0);
  try {
    fu.forward(randn({15, 32}, rng, false), v);
    FAIL("expected AlignmentError");
  } catch (const AlignmentError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("15") != std::string::npos);
    CHECK(msg.find("16") != std::string::npos);
  }
}

TEST_CASE("frontends to fusion gradient") {
  ModelConfig cfg = small_cfg();
  ParamStore store(cfg.dtype, 4);
  AudioFront af(store, cfg);
  VisualFront vf(store, cfg);
  Fusion fu(store, cfg);
  std::mt19937_64 rng(4);
  auto xa = randn({12}, rng, false), xv = randn({3, 4, 4, 1}, rng, false);
  auto f = [&] { return probe(fu.forward(af.forward(xa), vf.forward(xv))); };
  CHECK(grad_check(f, tensors(store.params()), 1e-5, 300, 1).max_rel_error < 1e-4);
}

TEST_CASE("prompt encoder shapes and n = 0") {
  ModelConfig cfg;
  cfg.dtype = DType::f64;
  ParamStore store(cfg.dtype, 5);
  PromptEncoder enc(store, cfg);
  std::mt19937_64 rng(5);
  auto fused = randn({16, 32}, rng, false);
  for (std::size_t n : {0, 1, 4, 16}) {
    const auto bank = init_prompt_bank(n, 32, cfg.encoder_layers, 9, cfg.dtype);
    const auto e = enc.encode_with_prompts(fused, bank);
    CHECK(e.values.shape() == Shape{n + 16, 32});
    CHECK(e.prompt_rows == n);
    CHECK(e.features().shape() == Shape{16, 32});
    if (n == 0) CHECK(same_values(e.values, enc.encode(fused)));
  }
  CHECK_THROWS_AS(enc.encode_with_prompts(fused, init_prompt_bank(2, 32, 3, 9, cfg.dtype)),
                  ConfigurationError);
  CHECK_THROWS_AS(init_prompt_bank(2, 32, 0, 9, cfg.dtype), ConfigurationError);
  // Seeded initialisation.
  CHECK(same_values(init_prompt_bank(3, 32, 4, 7, cfg.dtype).prompts[2],
                    init_prompt_bank(3, 32, 4, 7, cfg.dtype).prompts[2]));
}

TEST_CASE("deep prompts: per-layer injection, discarded intermediate outputs") {
  ModelConfig cfg = small_cfg();
  ParamStore store(cfg.dtype, 6);
  PromptEncoder enc(store, cfg);
  std::mt19937_64 rng(6);
  auto fused = randn({5, 8}, rng, false);
  const auto bank = init_prompt_bank(2, 8, cfg.encoder_layers, 3, cfg.dtype);

  // Manual chain: layer i reads bank.prompts[i], earlier prompt outputs are dropped.
  Tensor feats = enc.add_positions(fused);
  Tensor last;
  for (std::size_t i = 0; i < enc.depth(); ++i) {
    auto [p, f] = enc.layer(i).forward(bank.prompts[i], feats);
    feats = f;
    last = p;
  }
  const Tensor manual = enc.final_norm(concat_rows({last, feats}));
  CHECK(same_values(manual, enc.encode_with_prompts(fused, bank).values));

  // Gradients reach every prompt matrix.
  auto e = enc.encode_with_prompts(fused, bank);
  backward(probe(e.values));
  for (const auto& p : bank.prompts) {
    double norm = 0;
    for (double g : p.grad_vector()) norm += std::abs(g);
    CHECK(norm > 0);
  }

  std::vector<Tensor> ps = tensors(store.params());
  for (const auto& p : bank.prompts) ps.push_back(p);
  auto f = [&] { return probe(enc.encode_with_prompts(fused, bank).values); };
  CHECK(grad_check(f, ps, 1e-5, 400, 2).max_rel_error < 1e-4);
}

TEST_CASE("language classifier") {
  ModelConfig cfg;
  cfg.dtype = DType::f64;
  ParamStore store(cfg.dtype, 7);
  LanguageClassifier clf(store, cfg);
  std::mt19937_64 rng(7);
  auto e = randn({20, 32}, rng, false);
  CHECK(clf.classify(e).shape() == Shape{1, 3});
  CHECK_THROWS_AS(clf.classify(randn({20, 16}, rng, false)), DimensionError);

  // Row permutation (reversal) changes the logits.
  std::vector<double> rev(e.numel());
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 32; ++c) rev[(19 - r) * 32 + c] = e.at(r * 32 + c);
  CHECK_FALSE(same_values(clf.classify(e), clf.classify(Tensor::from_data({20, 32}, rev, DType::f64))));

  ModelConfig sc = small_cfg();
  ParamStore s2(sc.dtype, 8);
  LanguageClassifier small(s2, sc);
  auto e1 = randn({6, 8}, rng), e2 = randn({4, 8}, rng);
  auto f = [&] {
    auto logits = small.classify_batch({e1, e2}, NormMode::train);
    return add(class_loss(logits[0], {0}), class_loss(logits[1], {1}));
  };
  std::vector<Tensor> ps = tensors(s2.params());
  ps.push_back(e1);
  ps.push_back(e2);
  CHECK(grad_check(f, ps, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("class_loss and predict_language") {
  auto row = [](std::vector<double> v) { return Tensor::from_data({1, v.size()}, v, DType::f64); };
  CHECK(std::abs(class_loss(row({0, 0, 0}), {1}).item() - std::log(3.0)) < 1e-12);
  CHECK(class_loss(row({20, 0, 0}), {0}).item() < 1e-8);
  CHECK_THROWS_AS(class_loss(row({0, 0, 0}), {3}), LabelError);
  CHECK_THROWS_AS(class_loss(row({0, 0, 0}), {-1}), LabelError);

  std::mt19937_64 rng(8);
  for (int i = 0; i < 10; ++i) {
    auto l = randn({1, 4}, rng, false);
    const int gt = i % 4;
    const double ref = -log_softmax(l, 1).at(static_cast<std::size_t>(gt));
    CHECK(std::abs(class_loss(l, {gt}).item() - ref) < 1e-12);
    CHECK(class_loss(l, {gt}).item() >= 0);
    auto v = l.to_vector();
    const int pred = predict_language(v).id;
    for (auto& x : v) x = 3.0 * x + 11.0;
    CHECK(predict_language(v).id == pred);
  }
  CHECK(predict_language(std::vector<double>{0.1, 2.0, 0.3}).id == 1);
  CHECK(predict_language(std::vector<double>{5, 5, 1}).id == 0);
  CHECK(LanguageLabel{2}.code() == "L2");
}

TEST_CASE("transformer decoder") {
  ModelConfig cfg;
  cfg.dtype = DType::f64;
  cfg.vocab_size = 40;
  ParamStore store(cfg.dtype, 9);
  TransformerDecoder dec(store, cfg);
  std::mt19937_64 rng(9);
  auto memory = randn({20, 32}, rng, false);
  const std::vector<int> prefix{Vocab::kSos, Vocab::kFirstLanguage + 1, 10, 12, 15};
  auto out = dec.forward(prefix, memory);
  REQUIRE(out.shape() == Shape{5, 40});
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 40; ++k) s += std::exp(out.at(r * 40 + k));
    CHECK(std::abs(s - 1) < 1e-6);
  }

  // Causality: changing position j leaves rows < j untouched.
  for (std::size_t j = 2; j < prefix.size(); ++j) {
    auto changed = prefix;
    changed[j] = 20;
    auto o2 = dec.forward(changed, memory);
    for (std::size_t r = 0; r < j; ++r)
      for (std::size_t k = 0; k < 40; ++k) CHECK(o2.at(r * 40 + k) == out.at(r * 40 + k));
    bool differs = false;
    for (std::size_t k = 0; k < 40; ++k) differs |= o2.at(j * 40 + k) != out.at(j * 40 + k);
    CHECK(differs);
  }

  // Every memory row, prompt rows included, can move the output.
  for (std::size_t row : {0, 3, 19}) {
    auto m2 = Tensor::from_data(memory.shape(), memory.to_vector(), DType::f64);
    for (std::size_t c = 0; c < 32; ++c) m2.set(row * 32 + c, m2.at(row * 32 + c) + 1.0);
    CHECK_FALSE(same_values(dec.forward(prefix, m2), out));
  }

  CHECK_THROWS_AS(dec.forward(std::vector<int>{Vocab::kSos, 10, 11}, memory), ConditioningError);
  CHECK_THROWS_AS(dec.forward(std::vector<int>{Vocab::kFirstLanguage}, memory), ConditioningError);
  CHECK_THROWS_AS(dec.forward(std::vector<int>{Vocab::kSos, Vocab::kFirstLanguage + 3}, memory),
                  ConditioningError);

  ModelConfig sc = small_cfg();
  ParamStore s2(sc.dtype, 10);
  TransformerDecoder small(s2, sc);
  auto mem = randn({4, 8}, rng);
  const std::vector<int> p{Vocab::kSos, Vocab::kFirstLanguage, 8, 9};
  const std::vector<int> y{8, 9, Vocab::kEos};
  auto f = [&] {
    auto rows = small.forward(p, mem);
    return attention_loss(slice_rows(rows, 1, 3), y);
  };
  std::vector<Tensor> ps = tensors(s2.params());
  ps.push_back(mem);
  CHECK(grad_check(f, ps, 1e-5, 400, 3).max_rel_error < 1e-4);
}

TEST_CASE("assembled model registers prompts and freezes the backbone") {
  ModelConfig cfg = small_cfg();
  AvsrModel model(cfg);
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
    CHECK(model.store().find("prompts.layer" + std::to_string(i)).shape() == Shape{2, 8});
  std::mt19937_64 rng(11);
  const auto audio = testing_util::randn_f(5 * 4, rng), video = testing_util::randn_f(5 * 16, rng);
  const auto enc = model.encode(audio, video, 5);
  CHECK(enc.e_av.values.shape() == Shape{7, 8});
  CHECK(enc.ctc_logits.shape() == Shape{5, 12});
  CHECK_THROWS_AS(model.encode(audio, video, 4), DimensionError);

  model.freeze_backbone(true);
  for (const auto& p : model.store().params()) {
    const bool backbone = p.name.starts_with("encoder.") || p.name.starts_with("audio_front.") ||
                          p.name.starts_with("visual_front.") || p.name.starts_with("fusion.");
    CHECK(p.tensor.requires_grad() == !backbone);
  }
  model.freeze_backbone(false);
  for (const auto& p : model.store().params()) CHECK(p.tensor.requires_grad());

  ModelConfig none = cfg;
  none.prompt_count = 0;
  AvsrModel bare(none);
  CHECK(bare.encode(audio, video, 5).e_av.values.shape() == Shape{5, 8});
  CHECK_THROWS(bare.store().find("prompts.layer0"));
}
