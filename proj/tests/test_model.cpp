#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cast/loss.hpp"
#include "cast/model.hpp"

#include "oracles.hpp"

#include <filesystem>

using namespace cast;

namespace {

// Full-depth but narrow configuration for gradient checks.
CastConfig tiny_config() {
  CastConfig c;
  c.d_model = 8;
  c.scales = {8, 16};
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.heads = 2;
  c.ff_dim = 16;
  c.n_queries = 4;
  c.window_len = 32;
  c.c_eeg = 3;
  c.dropout = 0.0;
  return c;
}

template <class S>
Mat<S> randn(Index r, Index c, Rng& rng) {
  Mat<S> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = S(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("default geometry: 50+25+12 tokens of width 128") {
  CastConfig c;
  CHECK(c.tokens_for_scale(8) == 50);
  CHECK(c.tokens_for_scale(16) == 25);
  CHECK(c.tokens_for_scale(32) == 12);  // trailing 16 samples dropped at this scale
  CHECK(c.n_tokens() == 87);
  CHECK(c.samples_per_query() == 16);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config validation rejects inconsistent settings") {
  CastConfig c;
  SUBCASE("heads must divide width") {
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), Error);
  }
  SUBCASE("queries must divide window") {
    c.n_queries = 27;
    CHECK_THROWS_AS(c.validate(), Error);
  }
  SUBCASE("scales ascending") {
    c.scales = {16, 8};
    CHECK_THROWS_AS(c.validate(), Error);
  }
  SUBCASE("scale larger than window") {
    c.scales = {8, 512};
    CHECK_THROWS_AS(c.validate(), Error);
  }
  SUBCASE("dropout below one") {
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), Error);
  }
}

TEST_CASE("config json round trip") {
  CastConfig c;
  c.scales = {16, 32};
  c.dropout = 0.25;
  CastConfig back = cast_config_from_json(cast_config_to_json(c));
  CHECK(back.scales == c.scales);
  CHECK(back.dropout == c.dropout);
  CHECK(back.d_model == c.d_model);
}

TEST_CASE("full-size forward has the right shapes") {
  CastConfig cfg;
  std::vector<std::string> chans{"LA1", "LA2", "LB1"};
  CastModel<float> m(cfg, chans, 7);

  Rng rng(1);
  Matf eeg = randn<float>(21, 400, rng);
  Matf mem = m.encode_window(eeg);
  CHECK(mem.rows() == 87);
  CHECK(mem.cols() == 128);

  Matf pred = m.predict_window(eeg);
  CHECK(pred.rows() == 3);
  CHECK(pred.cols() == 400);
  CHECK(pred.allFinite());

  // Channel embeddings make per-channel outputs distinct.
  CHECK((pred.row(0) - pred.row(1)).cwiseAbs().maxCoeff() > 1e-6f);

  // Cross-attention rows are distributions over the 87 memory tokens.
  const auto& attn = m.last_cross_attention();
  REQUIRE(!attn.empty());
  for (const auto& A : attn) {
    CHECK(A.cols() == 87);
    for (Index r = 0; r < A.rows(); ++r)
      CHECK(double(A.row(r).sum()) == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("parameter count matches the closed-form expectation") {
  CastConfig c;
  std::vector<std::string> chans{"a", "b", "c", "d"};
  CastModel<float> m(c, chans, 1);

  Index d = c.d_model, ff = c.ff_dim, h = c.head_hidden(), spq = c.samples_per_query();
  Index embed = 0;
  for (Index s : c.scales) embed += (c.c_eeg * s * d + d) + (d * d + d) + d;
  Index attn = 4 * (d * d + d);
  Index ffp = d * ff + ff + ff * d + d;
  Index enc_block = 2 * (2 * d) + attn + ffp;
  Index enc = c.encoder_layers * enc_block + 2 * d;
  Index dec_block = 3 * (2 * d) + 2 * attn + ffp;
  Index dec = c.n_queries * d + Index(chans.size()) * d + c.decoder_layers * dec_block + 2 * d +
              (d * h + h) + (h * spq + spq);

  CHECK(m.params().total_size() == embed + enc + dec);
}

TEST_CASE("initialization is seed-deterministic and name-keyed") {
  CastConfig cfg = tiny_config();
  std::vector<std::string> chans{"x", "y"};
  CastModel<double> a(cfg, chans, 42), b(cfg, chans, 42), c(cfg, chans, 43);

  bool all_equal = true, any_diff_seed = false;
  a.params().for_each([&](const std::string& name, nn::Tensor<double>& t) {
    if (t.value != b.params().at(name).value) all_equal = false;
    if (t.value != c.params().at(name).value) any_diff_seed = true;
  });
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("whole-model gradients agree with finite differences") {
  CastConfig cfg = tiny_config();
  std::vector<std::string> chans{"d1", "d2"};
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(500 + seed);
    CastModel<double> m(cfg, chans, seed);
    Index B = 2;
    Matd eeg = randn<double>(B * cfg.c_eeg, cfg.window_len, rng);
    Matd target = randn<double>(B * 2, cfg.window_len, rng);
    LossWeights w;
    ForwardCtx ctx;

    auto loss = [&] { return composite_loss(m.forward(eeg, B, ctx), target, w).total; };
    Matd g;
    composite_loss(m.forward(eeg, B, ctx), target, w, &g);
    m.params().zero_grads();
    m.backward(g);

    // Tolerance leaves room for finite-difference truncation through the
    // eps-regularized spectral log on near-empty bins.
    auto chk = oracle::check_param_gradients(m.params(), loss, rng.stream("fd"), 3, 1e-5);
    CAPTURE(chk.worst);
    CHECK(chk.max_rel_err < 1e-4);
  }
}

TEST_CASE("gradient reaches every parameter") {
  CastConfig cfg = tiny_config();
  CastModel<double> m(cfg, {"d1", "d2", "d3"}, 9);
  Rng rng(10);
  Index B = 2;
  Matd eeg = randn<double>(B * cfg.c_eeg, cfg.window_len, rng);
  Matd target = randn<double>(B * 3, cfg.window_len, rng);
  ForwardCtx ctx;
  Matd g;
  composite_loss(m.forward(eeg, B, ctx), target, LossWeights{}, &g);
  m.params().zero_grads();
  m.backward(g);
  m.params().for_each([&](const std::string& name, nn::Tensor<double>& t) {
    CAPTURE(name);
    CHECK(t.grad.cwiseAbs().maxCoeff() > 0.0);
  });
}

TEST_CASE("windows in a batch never influence each other") {
  CastConfig cfg = tiny_config();
  CastModel<float> m(cfg, {"d1", "d2"}, 11);
  Rng rng(12);
  ForwardCtx ctx;

  Matf eeg = randn<float>(2 * cfg.c_eeg, cfg.window_len, rng);
  Matf p1 = m.forward(eeg, 2, ctx);
  Matf eeg2 = eeg;
  eeg2.bottomRows(cfg.c_eeg).setRandom();
  Matf p2 = m.forward(eeg2, 2, ctx);

  CHECK(p1.topRows(2) == p2.topRows(2));
  CHECK(p1.bottomRows(2) != p2.bottomRows(2));

  // Batched and single-window forwards agree.
  Matf single = m.forward(Matf(eeg.topRows(cfg.c_eeg)), 1, ctx);
  CHECK((single - p1.topRows(2)).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("dropout streams are reproducible and only active in training") {
  CastConfig cfg = tiny_config();
  cfg.dropout = 0.2;
  CastModel<float> m(cfg, {"d1"}, 13);
  Rng rng(14);
  Matf eeg = randn<float>(cfg.c_eeg, cfg.window_len, rng);

  ForwardCtx eval_ctx;
  Matf e1 = m.forward(eeg, 1, eval_ctx);
  Matf e2 = m.forward(eeg, 1, eval_ctx);
  CHECK(e1 == e2);

  Rng d1(99), d2(99), d3(100);
  ForwardCtx t1{true, &d1}, t2{true, &d2}, t3{true, &d3};
  Matf a = m.forward(eeg, 1, t1);
  Matf b = m.forward(eeg, 1, t2);
  Matf c = m.forward(eeg, 1, t3);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a != e1);
}

TEST_CASE("fresh decoder resize keeps the encoder untouched") {
  CastConfig cfg = tiny_config();
  CastModel<float> m(cfg, {"d1", "d2"}, 15);
  Rng rng(16);
  Matf eeg = randn<float>(cfg.c_eeg, cfg.window_len, rng);

  Matf mem_before = m.encode_window(eeg);
  Matf pred_before = m.predict_window(eeg);

  m.resize_decoder({"d1", "d2"}, DecoderResize::fresh, 777);
  CHECK(m.encode_window(eeg) == mem_before);
  CHECK(m.predict_window(eeg) != pred_before);
}

TEST_CASE("keep_shared resize preserves decoder blocks bit-exactly") {
  CastConfig cfg = tiny_config();
  CastModel<float> m(cfg, {"d1", "d2", "d3"}, 17);
  Matf blocks_before = m.params().at("dec.b0.cross.wq.W").value;
  Matf queries_before = m.params().at("dec.queries").value;
  Matf chan_before = m.params().at("dec.chan_table").value;

  m.resize_decoder({"d1", "d3"}, DecoderResize::keep_shared, 888);
  CHECK(m.params().at("dec.b0.cross.wq.W").value == blocks_before);
  CHECK(m.params().at("dec.queries").value == queries_before);
  CHECK(m.params().at("dec.chan_table").value.rows() == 2);
  CHECK(m.params().at("dec.chan_table").value != chan_before.topRows(2));
  CHECK(m.n_channels() == 2);
}

TEST_CASE("model checkpoints restore byte-identical behaviour") {
  namespace fs = std::filesystem;
  auto path = (fs::temp_directory_path() / "cast_model_ckpt.bin").string();

  CastConfig cfg = tiny_config();
  CastModel<float> m(cfg, {"d1", "d2"}, 18);
  Rng rng(19);
  Matf eeg = randn<float>(cfg.c_eeg, cfg.window_len, rng);
  Matf before = m.predict_window(eeg);

  save_model(path, m, 321);
  CheckpointHeader hdr;
  CastModel<float> back = load_model<float>(path, &hdr);
  CHECK(hdr.step == 321);
  CHECK(back.channels() == m.channels());
  CHECK(back.predict_window(eeg) == before);
  fs::remove(path);
}

TEST_CASE("single-scale variants still produce a full-length trace") {
  CastConfig cfg;
  cfg.scales = {32};
  CHECK(cfg.n_tokens() == 12);
  CastModel<float> m(cfg, {"d1"}, 20);
  Rng rng(21);
  Matf eeg = randn<float>(21, 400, rng);
  Matf pred = m.predict_window(eeg);
  CHECK(pred.rows() == 1);
  CHECK(pred.cols() == 400);
  CHECK(pred.allFinite());
}
