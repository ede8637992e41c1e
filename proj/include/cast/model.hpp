#pragma once

// Scalp-to-depth translation model. The encoder tokenizes a 21 x 400
// canonical window at several patch widths (each patch flattened and run
// through a 2-layer MLP, plus a learned per-scale embedding and fixed
// sin/cos positions), concatenates all scales into one token sequence and
// runs pre-norm transformer blocks over it. The decoder holds a learned
// query sequence shared by all target channels plus one embedding row per
// channel; each channel's queries self-attend, cross-attend into the
// window's encoder memory, and a small MLP maps each query token to a
// 16-sample chunk of the reconstructed trace.
//
// A batch is kept folded in rows throughout: encoder rows are
// (window, token), decoder rows are (window, channel, query).

#include "cast/adam.hpp"
#include "cast/checkpoint.hpp"
#include "cast/common.hpp"
#include "cast/nn.hpp"
#include "cast/rng.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace cast {

struct CastConfig {
  Index d_model = 128;
  std::vector<Index> scales = {8, 16, 32};
  Index encoder_layers = 4;
  Index decoder_layers = 2;
  Index heads = 4;
  Index ff_dim = 512;
  Index n_queries = 25;
  Index window_len = 400;
  Index c_eeg = 21;
  double dropout = 0.1;

  Index tokens_for_scale(Index s) const { return window_len / s; }
  Index n_tokens() const {
    Index n = 0;
    for (Index s : scales) n += tokens_for_scale(s);
    return n;
  }
  Index samples_per_query() const { return window_len / n_queries; }
  Index head_hidden() const { return std::max<Index>(d_model / 2, 4); }

  void validate() const {
    require(d_model > 0 && d_model % 2 == 0, Err::config, "config: d_model must be positive and even");
    require(heads > 0 && d_model % heads == 0, Err::config, "config: heads must divide d_model");
    require(!scales.empty(), Err::config, "config: need at least one scale");
    Index prev = 0;
    for (Index s : scales) {
      require(s > prev, Err::config, "config: scales must be ascending and positive");
      require(s <= window_len, Err::config, "config: scale exceeds window length");
      prev = s;
    }
    require(encoder_layers >= 1 && decoder_layers >= 1, Err::config, "config: need >= 1 layer");
    require(ff_dim > 0, Err::config, "config: ff_dim must be positive");
    require(n_queries > 0 && window_len % n_queries == 0, Err::config,
            "config: query count must divide window length");
    require(window_len > 0, Err::config, "config: window length must be positive");
    require(c_eeg >= 1, Err::config, "config: need at least one input row");
    require(dropout >= 0.0 && dropout < 1.0, Err::config, "config: dropout must be in [0,1)");
  }
};

inline json cast_config_to_json(const CastConfig& c) {
  json j;
  j["d_model"] = c.d_model;
  j["scales"] = c.scales;
  j["encoder_layers"] = c.encoder_layers;
  j["decoder_layers"] = c.decoder_layers;
  j["heads"] = c.heads;
  j["ff_dim"] = c.ff_dim;
  j["n_queries"] = c.n_queries;
  j["window_len"] = c.window_len;
  j["c_eeg"] = c.c_eeg;
  j["dropout"] = c.dropout;
  return j;
}

inline CastConfig cast_config_from_json(const json& j) {
  CastConfig c;
  try {
    c.d_model = j.value("d_model", c.d_model);
    if (j.contains("scales")) c.scales = j.at("scales").get<std::vector<Index>>();
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.heads = j.value("heads", c.heads);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.n_queries = j.value("n_queries", c.n_queries);
    c.window_len = j.value("window_len", c.window_len);
    c.c_eeg = j.value("c_eeg", c.c_eeg);
    c.dropout = j.value("dropout", c.dropout);
  } catch (const std::exception& e) {
    fail(Err::parse, std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

struct ForwardCtx {
  bool training = false;
  Rng* rng = nullptr;  // dropout stream, required when training with dropout > 0
};

namespace detail {

template <class S>
struct PatchEmbed {
  CastConfig cfg;
  std::vector<nn::Linear<S>> l1, l2;
  std::vector<nn::Tensor<S>*> scale_emb;
  std::vector<Mat<S>> positions;
  std::vector<Mat<S>> patches_, tanh_, dpatch_;

  void bind(nn::ParamStore<S>& ps, const CastConfig& c, const Rng& init) {
    cfg = c;
    size_t ns = c.scales.size();
    l1.resize(ns);
    l2.resize(ns);
    scale_emb.resize(ns);
    positions.resize(ns);
    patches_.resize(ns);
    tanh_.resize(ns);
    dpatch_.resize(ns);
    for (size_t si = 0; si < ns; ++si) {
      Index s = c.scales[si];
      std::string prefix = "embed.s" + std::to_string(s);
      l1[si].bind(ps, prefix + ".l1", c.c_eeg * s, c.d_model, init);
      l2[si].bind(ps, prefix + ".l2", c.d_model, c.d_model, init);
      scale_emb[si] = &ps.add(prefix + ".scale_emb", 1, c.d_model);
      nn::init_normal(*scale_emb[si], init.stream(prefix + ".scale_emb"), 0.02);
      positions[si] = nn::sinusoidal_positions<S>(c.tokens_for_scale(s), c.d_model);
    }
  }

  void rebind(nn::ParamStore<S>& ps) {
    for (size_t si = 0; si < cfg.scales.size(); ++si) {
      std::string prefix = "embed.s" + std::to_string(cfg.scales[si]);
      l1[si].rebind(ps, prefix + ".l1");
      l2[si].rebind(ps, prefix + ".l2");
      scale_emb[si] = &ps.at(prefix + ".scale_emb");
    }
  }

  // eeg rows are (window, channel): [batch * c_eeg, window_len].
  const Mat<S>& forward(const Mat<S>& eeg, Index batch) {
    require(eeg.rows() == batch * cfg.c_eeg && eeg.cols() == cfg.window_len, Err::shape,
            "patch_embed: bad input stack");
    tokens_.resize(batch * cfg.n_tokens(), cfg.d_model);
    Index offset = 0;
    for (size_t si = 0; si < cfg.scales.size(); ++si) {
      Index s = cfg.scales[si];
      Index nt = cfg.tokens_for_scale(s);
      Mat<S>& P = patches_[si];
      P.resize(batch * nt, cfg.c_eeg * s);
      for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < nt; ++i)
          for (Index ch = 0; ch < cfg.c_eeg; ++ch)
            P.row(b * nt + i).segment(ch * s, s) = eeg.row(b * cfg.c_eeg + ch).segment(i * s, s);

      const Mat<S>& h = l1[si].forward(P);
      nn::gelu_forward(h, act_, tanh_[si]);
      const Mat<S>& e = l2[si].forward(act_);

      for (Index b = 0; b < batch; ++b) {
        auto dst = tokens_.block(b * cfg.n_tokens() + offset, 0, nt, cfg.d_model);
        dst = e.block(b * nt, 0, nt, cfg.d_model);
        dst += positions[si];
        dst.rowwise() += scale_emb[si]->value.row(0);
      }
      offset += nt;
    }
    batch_ = batch;
    return tokens_;
  }

  void backward(const Mat<S>& dtokens) {
    Index offset = 0;
    for (size_t si = 0; si < cfg.scales.size(); ++si) {
      Index s = cfg.scales[si];
      Index nt = cfg.tokens_for_scale(s);
      de_.resize(batch_ * nt, cfg.d_model);
      for (Index b = 0; b < batch_; ++b) {
        auto src = dtokens.block(b * cfg.n_tokens() + offset, 0, nt, cfg.d_model);
        de_.block(b * nt, 0, nt, cfg.d_model) = src;
        scale_emb[si]->grad.row(0) += src.colwise().sum();
      }
      const Mat<S>& da = l2[si].backward(de_);
      nn::gelu_backward(l1[si].y_, tanh_[si], da, dh_);
      l1[si].backward(dh_);
      offset += nt;
    }
  }

  Mat<S> tokens_, act_, de_, dh_;
  Index batch_ = 0;
};

template <class S>
struct EncoderBlock {
  nn::LayerNorm<S> ln1, ln2;
  nn::MultiHeadAttention<S> attn;
  nn::FeedForward<S> ff;
  nn::Dropout<S> drop1, drop2;

  void bind(nn::ParamStore<S>& ps, const std::string& prefix, const CastConfig& c, const Rng& init) {
    ln1.bind(ps, prefix + ".ln1", c.d_model);
    ln2.bind(ps, prefix + ".ln2", c.d_model);
    attn.bind(ps, prefix + ".attn", c.d_model, int(c.heads), init);
    ff.bind(ps, prefix + ".ff", c.d_model, c.ff_dim, init);
    drop1 = nn::Dropout<S>(c.dropout);
    drop2 = nn::Dropout<S>(c.dropout);
  }
  void rebind(nn::ParamStore<S>& ps, const std::string& prefix) {
    ln1.rebind(ps, prefix + ".ln1");
    ln2.rebind(ps, prefix + ".ln2");
    attn.rebind(ps, prefix + ".attn");
    ff.rebind(ps, prefix + ".ff");
  }

  const Mat<S>& forward(const Mat<S>& x, Index block_rows, const ForwardCtx& ctx) {
    const Mat<S>& nx = ln1.forward(x);
    const Mat<S>& a = attn.forward(nx, nx, block_rows, block_rows);
    y1_ = x + drop1.forward(a, ctx.training, ctx.rng);
    const Mat<S>& f = ff.forward(ln2.forward(y1_));
    y2_ = y1_ + drop2.forward(f, ctx.training, ctx.rng);
    return y2_;
  }

  const Mat<S>& backward(const Mat<S>& dy) {
    dy1_ = dy + ln2.backward(ff.backward(drop2.backward(dy)));
    attn.backward(drop1.backward(dy1_), dq_, dkv_);
    dq_ += dkv_;
    dx_ = dy1_ + ln1.backward(dq_);
    return dx_;
  }

  Mat<S> y1_, y2_, dy1_, dq_, dkv_, dx_;
};

template <class S>
struct DecoderBlock {
  nn::LayerNorm<S> ln1, ln2, ln3;
  nn::MultiHeadAttention<S> self_attn, cross_attn;
  nn::FeedForward<S> ff;
  nn::Dropout<S> drop1, drop2, drop3;

  void bind(nn::ParamStore<S>& ps, const std::string& prefix, const CastConfig& c, const Rng& init) {
    ln1.bind(ps, prefix + ".ln1", c.d_model);
    ln2.bind(ps, prefix + ".ln2", c.d_model);
    ln3.bind(ps, prefix + ".ln3", c.d_model);
    self_attn.bind(ps, prefix + ".self", c.d_model, int(c.heads), init);
    cross_attn.bind(ps, prefix + ".cross", c.d_model, int(c.heads), init);
    ff.bind(ps, prefix + ".ff", c.d_model, c.ff_dim, init);
    drop1 = nn::Dropout<S>(c.dropout);
    drop2 = nn::Dropout<S>(c.dropout);
    drop3 = nn::Dropout<S>(c.dropout);
  }
  void rebind(nn::ParamStore<S>& ps, const std::string& prefix) {
    ln1.rebind(ps, prefix + ".ln1");
    ln2.rebind(ps, prefix + ".ln2");
    ln3.rebind(ps, prefix + ".ln3");
    self_attn.rebind(ps, prefix + ".self");
    cross_attn.rebind(ps, prefix + ".cross");
    ff.rebind(ps, prefix + ".ff");
  }

  const Mat<S>& forward(const Mat<S>& x, const Mat<S>& memory, Index q_block, Index kv_block,
                        const ForwardCtx& ctx) {
    const Mat<S>& n1 = ln1.forward(x);
    const Mat<S>& a = self_attn.forward(n1, n1, q_block, q_block);
    y1_ = x + drop1.forward(a, ctx.training, ctx.rng);
    const Mat<S>& c = cross_attn.forward(ln2.forward(y1_), memory, q_block, kv_block);
    y2_ = y1_ + drop2.forward(c, ctx.training, ctx.rng);
    const Mat<S>& f = ff.forward(ln3.forward(y2_));
    y3_ = y2_ + drop3.forward(f, ctx.training, ctx.rng);
    return y3_;
  }

  // Returns d loss / d x; adds this block's memory gradient into dmemory.
  const Mat<S>& backward(const Mat<S>& dy, Mat<S>& dmemory) {
    dy2_ = dy + ln3.backward(ff.backward(drop3.backward(dy)));
    cross_attn.backward(drop2.backward(dy2_), dq_, dkv_);
    dmemory += dkv_;
    dy1_ = dy2_ + ln2.backward(dq_);
    self_attn.backward(drop1.backward(dy1_), dq_, dkv_);
    dq_ += dkv_;
    dx_ = dy1_ + ln1.backward(dq_);
    return dx_;
  }

  Mat<S> y1_, y2_, y3_, dy1_, dy2_, dq_, dkv_, dx_;
};

}  // namespace detail

enum class DecoderResize { fresh, keep_shared };

template <class S>
class CastModel {
 public:
  CastModel(const CastConfig& cfg, std::vector<std::string> channel_names, uint64_t seed)
      : cfg_(cfg), channels_(std::move(channel_names)), seed_(seed) {
    cfg_.validate();
    require(!channels_.empty(), Err::config, "model: need at least one target channel");
    Rng root(seed);
    embed_.bind(params_, cfg_, root);
    enc_blocks_.resize(size_t(cfg_.encoder_layers));
    for (Index i = 0; i < cfg_.encoder_layers; ++i)
      enc_blocks_[size_t(i)].bind(params_, "enc.b" + std::to_string(i), cfg_, root);
    enc_final_.bind(params_, "enc.final_ln", cfg_.d_model);
    bind_decoder(root);
  }

  // layers hold pointers into params_: map nodes survive a move, not a copy
  CastModel(const CastModel&) = delete;
  CastModel& operator=(const CastModel&) = delete;
  CastModel(CastModel&&) = default;
  CastModel& operator=(CastModel&&) = default;

  const CastConfig& config() const { return cfg_; }
  const std::vector<std::string>& channels() const { return channels_; }
  Index n_channels() const { return Index(channels_.size()); }
  uint64_t seed() const { return seed_; }
  nn::ParamStore<S>& params() { return params_; }
  const nn::ParamStore<S>& params() const { return params_; }

  // eeg rows are (window, channel): [batch * c_eeg, window_len].
  const Mat<S>& encode(const Mat<S>& eeg, Index batch, const ForwardCtx& ctx) {
    const Mat<S>* x = &embed_.forward(eeg, batch);
    for (auto& b : enc_blocks_) x = &b.forward(*x, cfg_.n_tokens(), ctx);
    return enc_final_.forward(*x);
  }

  // memory rows are (window, token); output rows are (window, channel).
  const Mat<S>& decode(const Mat<S>& memory, Index batch, const ForwardCtx& ctx) {
    require(memory.rows() == batch * cfg_.n_tokens() && memory.cols() == cfg_.d_model, Err::shape,
            "decode: bad memory shape");
    Index C = n_channels(), Q = cfg_.n_queries;
    dec_in_.resize(batch * C * Q, cfg_.d_model);
    for (Index b = 0; b < batch; ++b)
      for (Index c = 0; c < C; ++c) {
        auto rows = dec_in_.block((b * C + c) * Q, 0, Q, cfg_.d_model);
        rows = queries_->value;
        rows += query_pos_;
        rows.rowwise() += chan_table_->value.row(c);
      }

    const Mat<S>* x = &dec_in_;
    for (auto& blk : dec_blocks_) x = &blk.forward(*x, memory, Q, cfg_.n_tokens(), ctx);
    const Mat<S>& n = dec_final_.forward(*x);
    const Mat<S>& h = out1_.forward(n);
    nn::gelu_forward(h, out_act_, out_tanh_);
    const Mat<S>& chunks = out2_.forward(out_act_);  // [batch*C*Q, samples_per_query]
    pred_ = Eigen::Map<const Mat<S>>(chunks.data(), batch * C, cfg_.window_len);
    dec_batch_ = batch;
    return pred_;
  }

  const Mat<S>& forward(const Mat<S>& eeg, Index batch, const ForwardCtx& ctx) {
    return decode(encode(eeg, batch, ctx), batch, ctx);
  }

  // dpred rows are (window, channel). Gradients accumulate in the store.
  void backward(const Mat<S>& dpred) {
    Index batch = dec_batch_, C = n_channels(), Q = cfg_.n_queries;
    require(dpred.rows() == batch * C && dpred.cols() == cfg_.window_len, Err::shape,
            "backward: bad upstream shape");
    Eigen::Map<const Mat<S>> dchunks(dpred.data(), batch * C * Q, cfg_.samples_per_query());
    const Mat<S>& dact = out2_.backward(dchunks);
    nn::gelu_backward(out1_.y_, out_tanh_, dact, dout_h_);
    dnorm_ = dec_final_.backward(out1_.backward(dout_h_));

    dmem_.setZero(batch * cfg_.n_tokens(), cfg_.d_model);
    const Mat<S>* dx = &dnorm_;
    for (auto it = dec_blocks_.rbegin(); it != dec_blocks_.rend(); ++it)
      dx = &it->backward(*dx, dmem_);

    for (Index b = 0; b < batch; ++b)
      for (Index c = 0; c < C; ++c) {
        auto rows = dx->block((b * C + c) * Q, 0, Q, cfg_.d_model);
        queries_->grad += rows;
        chan_table_->grad.row(c) += rows.colwise().sum();
      }

    const Mat<S>* de = &enc_final_.backward(dmem_);
    for (auto it = enc_blocks_.rbegin(); it != enc_blocks_.rend(); ++it) de = &it->backward(*de);
    embed_.backward(*de);
  }

  // Swap the decoder for a new channel set. `fresh` reinitializes every
  // decoder parameter; `keep_shared` reinitializes only the channel table
  // and keeps queries, blocks and output head bit-exact.
  void resize_decoder(std::vector<std::string> new_channels, DecoderResize mode, uint64_t seed) {
    require(!new_channels.empty(), Err::config, "resize_decoder: need at least one channel");
    channels_ = std::move(new_channels);
    Rng root(seed);
    if (mode == DecoderResize::fresh) {
      params_.erase_prefix("dec.");
      bind_decoder(root);
    } else {
      params_.erase_prefix("dec.chan_table");
      chan_table_ = &params_.add("dec.chan_table", n_channels(), cfg_.d_model);
      nn::init_normal(*chan_table_, root.stream("dec.chan_table"), 0.02);
      rebind_decoder();
    }
  }

  CastModel clone() const {
    CastModel copy(cfg_, channels_, seed_);
    params_.for_each([&](const std::string& name, const nn::Tensor<S>& t) {
      copy.params_.at(name).value = t.value;
    });
    return copy;
  }

  // Convenience single-window entry points.
  Mat<S> predict_window(const Mat<S>& eeg_window) {
    ForwardCtx ctx;
    return forward(eeg_window, 1, ctx);
  }
  Mat<S> encode_window(const Mat<S>& eeg_window) {
    ForwardCtx ctx;
    return encode(eeg_window, 1, ctx);
  }

  const std::vector<Mat<S>>& last_cross_attention() const {
    return dec_blocks_.back().cross_attn.attn_;
  }

 private:
  void bind_decoder(const Rng& root) {
    queries_ = &params_.add("dec.queries", cfg_.n_queries, cfg_.d_model);
    nn::init_normal(*queries_, root.stream("dec.queries"), 0.02);
    chan_table_ = &params_.add("dec.chan_table", n_channels(), cfg_.d_model);
    nn::init_normal(*chan_table_, root.stream("dec.chan_table"), 0.02);
    dec_blocks_.clear();
    dec_blocks_.resize(size_t(cfg_.decoder_layers));
    for (Index i = 0; i < cfg_.decoder_layers; ++i)
      dec_blocks_[size_t(i)].bind(params_, "dec.b" + std::to_string(i), cfg_, root);
    dec_final_.bind(params_, "dec.final_ln", cfg_.d_model);
    out1_.bind(params_, "dec.out.l1", cfg_.d_model, cfg_.head_hidden(), root);
    out2_.bind(params_, "dec.out.l2", cfg_.head_hidden(), cfg_.samples_per_query(), root);
    query_pos_ = nn::sinusoidal_positions<S>(cfg_.n_queries, cfg_.d_model);
  }

  void rebind_decoder() {
    queries_ = &params_.at("dec.queries");
    for (Index i = 0; i < cfg_.decoder_layers; ++i)
      dec_blocks_[size_t(i)].rebind(params_, "dec.b" + std::to_string(i));
    dec_final_.rebind(params_, "dec.final_ln");
    out1_.rebind(params_, "dec.out.l1");
    out2_.rebind(params_, "dec.out.l2");
  }

  CastConfig cfg_;
  std::vector<std::string> channels_;
  uint64_t seed_;
  nn::ParamStore<S> params_;

  detail::PatchEmbed<S> embed_;
  std::vector<detail::EncoderBlock<S>> enc_blocks_;
  nn::LayerNorm<S> enc_final_;

  nn::Tensor<S>* queries_ = nullptr;
  nn::Tensor<S>* chan_table_ = nullptr;
  Mat<S> query_pos_;
  std::vector<detail::DecoderBlock<S>> dec_blocks_;
  nn::LayerNorm<S> dec_final_;
  nn::Linear<S> out1_, out2_;

  Mat<S> dec_in_, out_act_, out_tanh_, pred_, dout_h_, dnorm_, dmem_;
  Index dec_batch_ = 0;
};

// Model checkpoints carry the config and channel list in the header.
template <class S>
void save_model(const std::string& path, const CastModel<S>& m, int64_t step) {
  CheckpointHeader hdr;
  hdr.rng_seed = m.seed();
  hdr.step = step;
  hdr.extra["model_config"] = cast_config_to_json(m.config());
  hdr.extra["channels"] = m.channels();
  save_checkpoint(path, m.params(), hdr);
}

template <class S>
CastModel<S> load_model(const std::string& path, CheckpointHeader* header_out = nullptr) {
  nn::ParamStore<S> raw;
  CheckpointHeader hdr = load_checkpoint(path, raw);
  require(hdr.extra.contains("model_config") && hdr.extra.contains("channels"), Err::parse,
          "'" + path + "' is not a model checkpoint");
  CastConfig cfg = cast_config_from_json(hdr.extra.at("model_config"));
  std::vector<std::string> channels = hdr.extra.at("channels").get<std::vector<std::string>>();
  CastModel<S> m(cfg, channels, hdr.rng_seed);
  require(raw.count() == m.params().count(), Err::dimension_mismatch,
          "checkpoint parameter set does not match the declared config");
  raw.for_each([&](const std::string& name, const nn::Tensor<S>& t) {
    nn::Tensor<S>& dst = m.params().at(name);
    require(dst.rows() == t.rows() && dst.cols() == t.cols(), Err::dimension_mismatch,
            "checkpoint: shape mismatch for '" + name + "'");
    dst.value = t.value;
  });
  if (header_out) *header_out = hdr;
  return m;
}

}  // namespace cast
