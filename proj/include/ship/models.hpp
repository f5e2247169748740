#pragma once

// Encoder, Decoder and Task Model: three small pre-norm transformers over one
// token table. The Decoder and Task Model read the latent z as m_soft soft
// tokens prepended to their inputs.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ship/autodiff.hpp"
#include "ship/corpus.hpp"
#include "ship/rng.hpp"
#include "ship/vocab.hpp"

namespace ship {

using ad::Binder;
using ad::ParamBlock;
using ad::Var;

struct ModelConfig {
  int alphabet_size = 16;
  std::size_t d_model = 32;
  std::size_t m_soft = 4;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 64;
  std::size_t max_positions = 160;
  std::size_t max_index = 32;
  double embed_init = 0.3;
  double logvar_init = 0.0;  // bias of the log-variance head; 0 starts at the prior

  std::size_t d_z() const { return m_soft * d_model; }
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLogVarMin = -8.0;
inline constexpr double kLogVarMax = 8.0;

// Segment ids fed to the segment embedding.
enum SegmentId : int { kSegSoft = 0, kSegInstruction = 1, kSegInput = 2, kSegOutput = 3, kSegMarker = 4, kSegContext = 5 };
inline constexpr std::size_t kSegmentCount = 6;

// One input position. token >= 0 indexes the vocabulary; token < 0 selects
// row (-token - 1) of a caller-supplied embedding table (soft tokens, or the
// continuous instruction surrogate during induction).
struct Item {
  int token = 0;
  int seg = 0;
  int idx = 0;
  int ridx = 0;
};

inline Tensor uniform_init(Shape s, double bound, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = bound * (2.0 * rng.uniform() - 1.0);
  return t;
}
inline Tensor normal_init(Shape s, double std, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = std * rng.normal();
  return t;
}

struct Linear {
  ParamBlock w, b;
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w = ParamBlock(name + ".w", uniform_init({in, out}, bound, rng));
    b = ParamBlock(name + ".b", uniform_init({out}, bound, rng));
  }
  Var operator()(Binder& bind, const Var& x) const { return ad::add(ad::matmul(x, bind(w)), bind(b)); }
  void collect(std::vector<ParamBlock*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct LayerNormParams {
  ParamBlock g, b;
  LayerNormParams() = default;
  LayerNormParams(const std::string& name, std::size_t d)
      : g(name + ".g", Tensor({d}, 1.0)), b(name + ".b", Tensor({d}, 0.0)) {}
  Var operator()(Binder& bind, const Var& x) const { return ad::layer_norm(x, bind(g), bind(b)); }
  void collect(std::vector<ParamBlock*>& out) {
    out.push_back(&g);
    out.push_back(&b);
  }
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const std::string& name, const ModelConfig& cfg, std::size_t vocab, std::size_t n_out, bool causal, Rng& rng)
      : cfg_(cfg), causal_(causal) {
    const std::size_t d = cfg.d_model;
    tok_ = ParamBlock(name + ".tok", normal_init({vocab, d}, cfg.embed_init, rng));
    pos_ = ParamBlock(name + ".pos", normal_init({cfg.max_positions, d}, cfg.embed_init, rng));
    seg_ = ParamBlock(name + ".seg", normal_init({kSegmentCount, d}, cfg.embed_init, rng));
    idx_ = ParamBlock(name + ".idx", normal_init({cfg.max_index, d}, cfg.embed_init, rng));
    ridx_ = ParamBlock(name + ".ridx", normal_init({cfg.max_index, d}, cfg.embed_init, rng));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = name + ".L" + std::to_string(l);
      Layer layer;
      layer.ln1 = LayerNormParams(p + ".ln1", d);
      layer.q = Linear(p + ".q", d, d, rng);
      layer.k = Linear(p + ".k", d, d, rng);
      layer.v = Linear(p + ".v", d, d, rng);
      layer.o = Linear(p + ".o", d, d, rng);
      layer.ln2 = LayerNormParams(p + ".ln2", d);
      layer.f1 = Linear(p + ".f1", d, cfg.ffn, rng);
      layer.f2 = Linear(p + ".f2", cfg.ffn, d, rng);
      layers_.push_back(std::move(layer));
    }
    lnf_ = LayerNormParams(name + ".lnf", d);
    if (n_out) head_ = Linear(name + ".head", d, n_out, rng);
    has_head_ = n_out > 0;
  }

  bool causal() const { return causal_; }
  const ParamBlock& token_table() const { return tok_; }

  void collect(std::vector<ParamBlock*>& out) {
    for (auto* p : {&tok_, &pos_, &seg_, &idx_, &ridx_}) out.push_back(p);
    for (auto& l : layers_) {
      l.ln1.collect(out);
      l.q.collect(out);
      l.k.collect(out);
      l.v.collect(out);
      l.o.collect(out);
      l.ln2.collect(out);
      l.f1.collect(out);
      l.f2.collect(out);
    }
    lnf_.collect(out);
    if (has_head_) head_.collect(out);
  }

  // Final hidden states [N, d] for the packed sequences (rows in order).
  Var hidden(Binder& bind, const Var& external, const std::vector<std::vector<Item>>& seqs) const {
    std::vector<std::size_t> ids, pos, seg, idx, ridx;
    std::vector<ad::Segment> segments;
    const std::size_t n_ext = external ? external->value.rows() : 0;
    const std::size_t vocab = tok_.shape()[0];
    for (const auto& s : seqs) {
      if (s.empty()) throw Error("backbone: empty sequence");
      if (s.size() > cfg_.max_positions)
        throw Error("sequence of length " + std::to_string(s.size()) + " exceeds positional capacity " +
                    std::to_string(cfg_.max_positions));
      segments.push_back({ids.size(), s.size()});
      for (std::size_t t = 0; t < s.size(); ++t) {
        const Item& it = s[t];
        if (it.token >= 0) {
          if (static_cast<std::size_t>(it.token) >= vocab) throw Error("backbone: token id out of range");
          ids.push_back(n_ext + static_cast<std::size_t>(it.token));
        } else {
          const auto r = static_cast<std::size_t>(-it.token - 1);
          if (r >= n_ext) throw Error("backbone: external row out of range");
          ids.push_back(r);
        }
        if (static_cast<std::size_t>(it.idx) >= cfg_.max_index || static_cast<std::size_t>(it.ridx) >= cfg_.max_index)
          throw Error("sequence index exceeds positional capacity " + std::to_string(cfg_.max_index));
        pos.push_back(t);
        seg.push_back(static_cast<std::size_t>(it.seg));
        idx.push_back(static_cast<std::size_t>(it.idx));
        ridx.push_back(static_cast<std::size_t>(it.ridx));
      }
    }
    const Var table = external ? ad::concat_rows({external, bind(tok_)}) : bind(tok_);
    Var h = ad::gather_rows(table, std::move(ids));
    h = ad::add(h, ad::gather_rows(bind(pos_), std::move(pos)));
    h = ad::add(h, ad::gather_rows(bind(seg_), std::move(seg)));
    h = ad::add(h, ad::gather_rows(bind(idx_), std::move(idx)));
    h = ad::add(h, ad::gather_rows(bind(ridx_), std::move(ridx)));
    for (const auto& l : layers_) {
      const Var a = l.ln1(bind, h);
      const Var att = ad::attention(l.q(bind, a), l.k(bind, a), l.v(bind, a), segments, cfg_.heads, causal_);
      h = ad::add(h, l.o(bind, att));
      const Var f = l.f2(bind, ad::relu(l.f1(bind, l.ln2(bind, h))));
      h = ad::add(h, f);
    }
    return lnf_(bind, h);
  }

  Var logits(Binder& bind, const Var& hidden, std::vector<std::size_t> rows) const {
    if (!has_head_) throw Error("backbone has no output head");
    return head_(bind, ad::gather_rows(hidden, std::move(rows)));
  }

 private:
  struct Layer {
    LayerNormParams ln1, ln2;
    Linear q, k, v, o, f1, f2;
  };
  ModelConfig cfg_;
  bool causal_ = false;
  bool has_head_ = false;
  ParamBlock tok_, pos_, seg_, idx_, ridx_;
  std::vector<Layer> layers_;
  LayerNormParams lnf_;
  Linear head_;
};

struct LatentDistribution {
  Var mu;       // [B, D_z]
  Var log_var;  // [B, D_z], clamped
};

// Encoder + Decoder + Task Model. Move-only: parameters are graph leaves.
class ModelBundle {
 public:
  explicit ModelBundle(const ModelConfig& cfg = {}, std::uint64_t seed = 0) : cfg_(cfg), vocab_(cfg.alphabet_size), seed_(seed) {
    Rng rng = Rng::derive(seed, fnv1a("model-init"));
    const std::size_t d = cfg.d_model;
    encoder = Backbone("enc", cfg, vocab_.size(), 0, false, rng);
    mu_head = Linear("enc.mu", d, cfg.d_z(), rng);
    logvar_head = Linear("enc.logvar", d, cfg.d_z(), rng);
    logvar_head.w.value() = Tensor({d, cfg.d_z()}, 0.0);
    logvar_head.b.value() = Tensor({cfg.d_z()}, cfg.logvar_init);
    decoder = Backbone("dec", cfg, vocab_.size(), vocab_.instruction_outputs().size(), true, rng);
    task = Backbone("task", cfg, vocab_.size(), vocab_.task_outputs().size(), true, rng);
  }
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;
  ModelBundle(ModelBundle&&) = default;
  ModelBundle& operator=(ModelBundle&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  std::uint64_t init_seed() const { return seed_; }

  std::vector<ParamBlock*> params() {
    std::vector<ParamBlock*> out;
    encoder.collect(out);
    mu_head.collect(out);
    logvar_head.collect(out);
    decoder.collect(out);
    task.collect(out);
    return out;
  }
  std::vector<const ParamBlock*> params() const {
    std::vector<const ParamBlock*> out;
    for (auto* p : const_cast<ModelBundle*>(this)->params()) out.push_back(p);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : params()) n += p->numel();
    return n;
  }

  ModelBundle clone() const {
    ModelBundle b(cfg_, seed_);
    auto dst = b.params();
    auto src = params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value() = src[i]->value();
    return b;
  }

  Backbone encoder;
  Linear mu_head, logvar_head;
  Backbone decoder;
  Backbone task;

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Latent

inline LatentDistribution encode_items(const ModelBundle& m, Binder& bind, const Var& external,
                                       const std::vector<std::vector<Item>>& seqs) {
  const Var h = m.encoder.hidden(bind, external, seqs);
  Tensor pool({seqs.size(), h->value.rows()}, 0.0);
  std::size_t off = 0;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    for (std::size_t t = 0; t < seqs[b].size(); ++t) pool.at(b, off + t) = 1.0 / static_cast<double>(seqs[b].size());
    off += seqs[b].size();
  }
  const Var pooled = ad::matmul(ad::constant(std::move(pool)), h);
  return {m.mu_head(bind, pooled), ad::clamp(m.logvar_head(bind, pooled), kLogVarMin, kLogVarMax)};
}

inline std::vector<Item> instruction_items(const Vocab& v, const corpus::TokenList& k) {
  std::vector<Item> items;
  for (std::size_t i = 0; i < k.size(); ++i) items.push_back({v.id(k[i]), kSegInstruction, static_cast<int>(i), 0});
  return items;
}

inline LatentDistribution encode(const ModelBundle& m, Binder& bind, const std::vector<corpus::TokenList>& ks) {
  std::vector<std::vector<Item>> seqs;
  for (const auto& k : ks) {
    if (k.empty()) throw Error("encode: empty instruction");
    seqs.push_back(instruction_items(m.vocab(), k));
  }
  return encode_items(m, bind, nullptr, seqs);
}

// Encodes continuous instruction embeddings [m_k, d] as a single sequence.
inline LatentDistribution encode_embeddings(const ModelBundle& m, Binder& bind, const Var& emb) {
  std::vector<Item> items;
  for (std::size_t i = 0; i < emb->value.rows(); ++i)
    items.push_back({-static_cast<int>(i) - 1, kSegInstruction, static_cast<int>(i), 0});
  return encode_items(m, bind, emb, {items});
}

// z = mu + exp(log_var / 2) * eps; a null eps selects mean-mode (z = mu).
inline Var sample_latent(const LatentDistribution& dist, const Tensor* eps) {
  if (!eps) return dist.mu;
  if (eps->shape != dist.mu->value.shape)
    throw ShapeError("sample_latent: eps shape " + shape_str(eps->shape) + " vs mu " + shape_str(dist.mu->value.shape));
  return ad::add(dist.mu, ad::mul(ad::exp(ad::scale(dist.log_var, 0.5)), ad::constant(*eps)));
}

inline Tensor standard_normal(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.normal();
  return t;
}

// ---------------------------------------------------------------------------
// Sequence layouts

inline void append_soft(std::vector<Item>& items, std::size_t row, std::size_t m_soft) {
  for (std::size_t j = 0; j < m_soft; ++j)
    items.push_back({-static_cast<int>(row * m_soft + j) - 1, kSegSoft, static_cast<int>(j), 0});
}

inline void append_data(std::vector<Item>& items, const Vocab& v, const corpus::Sequence& s, int seg) {
  const int n = static_cast<int>(s.size());
  for (int i = 0; i < n; ++i) items.push_back({v.id(std::string(1, s[static_cast<std::size_t>(i)])), seg, i, n - 1 - i});
}

// soft ‖ prefix ‖ <sep> ‖ x ‖ <bos> ‖ y. The prefix is the instruction k, a
// serialized demonstration context, or nothing. Returns the row of <bos>.
struct TaskPrefix {
  const corpus::TokenList* k = nullptr;
  const std::vector<corpus::Instance>* context = nullptr;
};

inline std::size_t task_layout(std::vector<Item>& items, const Vocab& v, std::size_t row, std::size_t m_soft,
                               const TaskPrefix& prefix, const corpus::Sequence& x, const corpus::Sequence& y) {
  append_soft(items, row, m_soft);
  if (prefix.k) {
    const int n = static_cast<int>(prefix.k->size());
    for (int i = 0; i < n; ++i)
      items.push_back({v.id((*prefix.k)[static_cast<std::size_t>(i)]), kSegInstruction, i, n - 1 - i});
  }
  if (prefix.context) {
    for (const auto& d : *prefix.context) {
      append_data(items, v, d.x, kSegContext);
      items.push_back({v.arrow(), kSegMarker, 0, 0});
      append_data(items, v, d.y, kSegContext);
      items.push_back({v.semicolon(), kSegMarker, 1, 0});
    }
  }
  items.push_back({v.sep(), kSegMarker, 2, 0});
  append_data(items, v, x, kSegInput);
  const std::size_t bos = items.size();
  items.push_back({v.bos(), kSegOutput, 0, 0});
  for (std::size_t i = 0; i < y.size(); ++i) items.push_back({v.id(std::string(1, y[i])), kSegOutput, static_cast<int>(i + 1), 0});
  return bos;
}

// soft ‖ [x = <x> ; y = <y>] ‖ <bos> ‖ k. Returns the row of <bos>.
inline std::size_t decoder_layout(std::vector<Item>& items, const Vocab& v, std::size_t row, std::size_t m_soft,
                                  const corpus::Instance* cond, const corpus::TokenList& k) {
  append_soft(items, row, m_soft);
  if (cond) {
    items.push_back({v.x_marker(), kSegMarker, 0, 0});
    items.push_back({v.equals(), kSegMarker, 1, 0});
    append_data(items, v, cond->x, kSegInput);
    items.push_back({v.semicolon(), kSegMarker, 2, 0});
    items.push_back({v.y_marker(), kSegMarker, 3, 0});
    items.push_back({v.equals(), kSegMarker, 4, 0});
    append_data(items, v, cond->y, kSegOutput);
  }
  const std::size_t bos = items.size();
  items.push_back({v.bos(), kSegInstruction, 0, 0});
  for (std::size_t i = 0; i < k.size(); ++i) items.push_back({v.id(k[i]), kSegInstruction, static_cast<int>(i + 1), 0});
  return bos;
}

// Reshapes z [B, D_z] into B * m_soft soft-token rows.
inline Var soft_tokens(const ModelBundle& m, const Var& z) {
  const std::size_t b = z->value.rows();
  if (z->value.cols() != m.config().d_z())
    throw ShapeError("soft_tokens: latent width " + std::to_string(z->value.cols()) + " != D_z " +
                     std::to_string(m.config().d_z()));
  return ad::reshape(z, {b * m.config().m_soft, m.config().d_model});
}

// ---------------------------------------------------------------------------
// Teacher-forced losses

struct TaskExample {
  TaskPrefix prefix;
  const corpus::Sequence* x = nullptr;
  const corpus::Sequence* y = nullptr;
};

// Sum over sequences of weight[b] * (mean per-token NLL of y ‖ <eos>).
inline Var task_nll(const ModelBundle& m, Binder& bind, const Var& z, const std::vector<TaskExample>& batch,
                    const std::vector<double>& weights) {
  const Vocab& v = m.vocab();
  std::vector<std::vector<Item>> seqs;
  std::vector<std::size_t> rows, targets;
  std::vector<double> w;
  std::size_t off = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::vector<Item> items;
    const auto& ex = batch[b];
    if (ex.y->empty()) throw Error("task_nll: empty target sequence");
    const std::size_t bos = task_layout(items, v, b, m.config().m_soft, ex.prefix, *ex.x, *ex.y);
    const double per = weights[b] / static_cast<double>(ex.y->size() + 1);
    for (std::size_t t = 0; t <= ex.y->size(); ++t) {
      rows.push_back(off + bos + t);
      targets.push_back(static_cast<std::size_t>(
          v.task_class(t < ex.y->size() ? v.id(std::string(1, (*ex.y)[t])) : v.eos())));
      w.push_back(per);
    }
    off += items.size();
    seqs.push_back(std::move(items));
  }
  const Var h = m.task.hidden(bind, soft_tokens(m, z), seqs);
  return ad::nll_loss(m.task.logits(bind, h, std::move(rows)), std::move(targets), std::move(w));
}

struct DecoderExample {
  const corpus::Instance* cond = nullptr;  // none under the no-condition ablation
  const corpus::TokenList* k = nullptr;
};

inline Var decoder_nll(const ModelBundle& m, Binder& bind, const Var& z, const std::vector<DecoderExample>& batch,
                       const std::vector<double>& weights) {
  const Vocab& v = m.vocab();
  std::vector<std::vector<Item>> seqs;
  std::vector<std::size_t> rows, targets;
  std::vector<double> w;
  std::size_t off = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::vector<Item> items;
    const auto& ex = batch[b];
    const std::size_t bos = decoder_layout(items, v, b, m.config().m_soft, ex.cond, *ex.k);
    const double per = weights[b] / static_cast<double>(ex.k->size() + 1);
    for (std::size_t t = 0; t <= ex.k->size(); ++t) {
      rows.push_back(off + bos + t);
      const int tok = t < ex.k->size() ? v.id((*ex.k)[t]) : v.eos();
      const int cls = v.instruction_class(tok);
      if (cls < 0) throw Error("decoder_nll: token '" + v.token(tok) + "' is not an instruction token");
      targets.push_back(static_cast<std::size_t>(cls));
      w.push_back(per);
    }
    off += items.size();
    seqs.push_back(std::move(items));
  }
  const Var h = m.decoder.hidden(bind, soft_tokens(m, z), seqs);
  return ad::nll_loss(m.decoder.logits(bind, h, std::move(rows)), std::move(targets), std::move(w));
}

// Teacher-forced decoder logits for one instruction: [|k| + 1, instruction vocab].
inline Tensor decoder_logits(const ModelBundle& m, const Tensor& z, const corpus::Instance* cond,
                             const corpus::TokenList& k) {
  Binder bind(false);
  std::vector<Item> items;
  const std::size_t bos = decoder_layout(items, m.vocab(), 0, m.config().m_soft, cond, k);
  const Var h = m.decoder.hidden(bind, soft_tokens(m, ad::constant(z)), {items});
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t <= k.size(); ++t) rows.push_back(bos + t);
  return m.decoder.logits(bind, h, rows)->value;
}

// ---------------------------------------------------------------------------
// Generation

inline Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  Tensor out({rows.size(), t.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * t.cols()), t.cols(),
                out.data.begin() + static_cast<std::ptrdiff_t>(i * t.cols()));
  return out;
}

inline std::size_t argmax_row(const Tensor& logits, std::size_t r) {
  const double* p = logits.data.data() + r * logits.cols();
  return static_cast<std::size_t>(std::max_element(p, p + logits.cols()) - p);
}

inline std::size_t sample_row(const Tensor& logits, std::size_t r, double temperature, Rng& rng) {
  const double* p = logits.data.data() + r * logits.cols();
  const double mx = *std::max_element(p, p + logits.cols());
  std::vector<double> w(logits.cols());
  double total = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) total += (w[j] = std::exp((p[j] - mx) / temperature));
  double u = rng.uniform() * total;
  for (std::size_t j = 0; j < w.size(); ++j)
    if ((u -= w[j]) <= 0.0) return j;
  return w.size() - 1;
}

inline constexpr std::size_t kMaxTaskOutput = 2 * corpus::kMaxInputLen + 1;

// Greedy y for each (z row, prefix, x). z is [B, D_z].
inline std::vector<corpus::Sequence> generate_task(const ModelBundle& m, const Tensor& z,
                                                   const std::vector<TaskPrefix>& prefixes,
                                                   const std::vector<corpus::Sequence>& xs,
                                                   std::size_t max_len = kMaxTaskOutput) {
  const Vocab& v = m.vocab();
  const std::size_t B = xs.size();
  std::vector<corpus::Sequence> out(B);
  std::vector<bool> done(B, false);
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<std::size_t> live;
    for (std::size_t b = 0; b < B; ++b)
      if (!done[b]) live.push_back(b);
    if (live.empty()) break;
    Binder bind(false);
    std::vector<std::vector<Item>> seqs;
    std::vector<std::size_t> rows;
    std::size_t off = 0;
    for (std::size_t i = 0; i < live.size(); ++i) {
      std::vector<Item> items;
      task_layout(items, v, i, m.config().m_soft, prefixes[live[i]], xs[live[i]], out[live[i]]);
      off += items.size();
      rows.push_back(off - 1);
      seqs.push_back(std::move(items));
    }
    const Var h = m.task.hidden(bind, soft_tokens(m, ad::constant(take_rows(z, live))), seqs);
    const Tensor logits = m.task.logits(bind, h, rows)->value;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const int tok = v.task_outputs()[argmax_row(logits, i)];
      if (tok == v.eos()) done[live[i]] = true;
      else out[live[i]] += v.token(tok)[0];
    }
  }
  return out;
}

enum class DecodeMode { greedy, sampled };

inline std::vector<corpus::TokenList> generate_instruction(const ModelBundle& m, const Tensor& z,
                                                           const std::vector<const corpus::Instance*>& conds,
                                                           std::size_t max_len, DecodeMode mode = DecodeMode::greedy,
                                                           double temperature = 1.0, Rng* rng = nullptr) {
  if (mode == DecodeMode::sampled && (!rng || temperature <= 0.0))
    throw Error("generate_instruction: sampled mode needs an rng and a positive temperature");
  const Vocab& v = m.vocab();
  const std::size_t B = conds.size();
  std::vector<corpus::TokenList> out(B);
  std::vector<bool> done(B, false);
  for (std::size_t step = 0; step <= max_len; ++step) {
    std::vector<std::size_t> live;
    for (std::size_t b = 0; b < B; ++b)
      if (!done[b]) live.push_back(b);
    if (live.empty()) break;
    Binder bind(false);
    std::vector<std::vector<Item>> seqs;
    std::vector<std::size_t> rows;
    std::size_t off = 0;
    for (std::size_t i = 0; i < live.size(); ++i) {
      std::vector<Item> items;
      decoder_layout(items, v, i, m.config().m_soft, conds[live[i]], out[live[i]]);
      off += items.size();
      rows.push_back(off - 1);
      seqs.push_back(std::move(items));
    }
    const Var h = m.decoder.hidden(bind, soft_tokens(m, ad::constant(take_rows(z, live))), seqs);
    const Tensor logits = m.decoder.logits(bind, h, rows)->value;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const std::size_t cls = mode == DecodeMode::greedy ? argmax_row(logits, i) : sample_row(logits, i, temperature, *rng);
      const int tok = v.instruction_outputs()[cls];
      if (tok == v.eos() || step == max_len) done[live[i]] = true;
      else out[live[i]].push_back(v.token(tok));
    }
  }
  return out;
}

// Mean of Enc(k) for each instruction, without building a training graph.
inline Tensor encode_mean(const ModelBundle& m, const std::vector<corpus::TokenList>& ks) {
  Binder bind(false);
  return encode(m, bind, ks).mu->value;
}

}  // namespace ship
