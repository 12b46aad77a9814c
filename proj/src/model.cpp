#include "mvrec/model.hpp"

#include <cmath>
#include <stdexcept>

#include "mvrec/rng.hpp"

namespace mvrec {

void ModelConfig::validate() const {
  if (image_size <= 0 || patch <= 0 || image_size % patch != 0)
    throw std::invalid_argument("model config: image_size must be divisible by patch");
  if (enc_dim % enc_heads != 0 || dec_dim % dec_heads != 0)
    throw std::invalid_argument("model config: dims must be divisible by head counts");
  if (dec_blocks < 1 || enc_blocks < 1) throw std::invalid_argument("model config: blocks >= 1");
  if (n_paths < 1) throw std::invalid_argument("model config: n_paths >= 1");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["image_size"] = std::to_string(image_size);
  kv["patch"] = std::to_string(patch);
  kv["enc_dim"] = std::to_string(enc_dim);
  kv["enc_blocks"] = std::to_string(enc_blocks);
  kv["enc_heads"] = std::to_string(enc_heads);
  kv["dec_dim"] = std::to_string(dec_dim);
  kv["dec_blocks"] = std::to_string(dec_blocks);
  kv["dec_heads"] = std::to_string(dec_heads);
  kv["mlp_ratio"] = std::to_string(mlp_ratio);
  kv["n_paths"] = std::to_string(n_paths);
  kv["gs_head"] = gs_head ? "1" : "0";
  kv["head_conv_channels"] = std::to_string(head_conv_channels);
  char buf[32];
  snprintf(buf, sizeof buf, "%.17g", gs_base_scale);
  kv["gs_base_scale"] = buf;
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto geti = [&](const char* k, int& dst) {
    auto it = kv.find(k);
    if (it != kv.end()) dst = std::stoi(it->second);
  };
  geti("image_size", c.image_size);
  geti("patch", c.patch);
  geti("enc_dim", c.enc_dim);
  geti("enc_blocks", c.enc_blocks);
  geti("enc_heads", c.enc_heads);
  geti("dec_dim", c.dec_dim);
  geti("dec_blocks", c.dec_blocks);
  geti("dec_heads", c.dec_heads);
  geti("mlp_ratio", c.mlp_ratio);
  geti("n_paths", c.n_paths);
  geti("head_conv_channels", c.head_conv_channels);
  auto it = kv.find("gs_head");
  if (it != kv.end()) c.gs_head = it->second == "1" || it->second == "true";
  it = kv.find("gs_base_scale");
  if (it != kv.end()) c.gs_base_scale = std::stod(it->second);
  c.validate();
  return c;
}

void Weights::add(const std::string& name, Tensor t) {
  if (index.count(name)) throw std::invalid_argument("weights: duplicate parameter " + name);
  index[name] = (int)params.size();
  params.emplace_back(name, std::move(t));
}

const Tensor& Weights::get(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw std::invalid_argument("weights: unknown parameter " + name);
  return params[it->second].second;
}

Tensor& Weights::get_mut(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw std::invalid_argument("weights: unknown parameter " + name);
  return params[it->second].second;
}

long long Weights::total_parameters() const {
  long long n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

namespace {

Tensor trunc_normal_tensor(Shape s, double sigma, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(s));
  for (long long i = 0; i < t.size(); ++i) t.at(i) = rng.trunc_normal(sigma);
  return t;
}

void add_attention(Weights& w, const std::string& prefix, int dim, Rng& rng, bool zero_out) {
  const double sigma = 0.02;
  w.add(prefix + ".wq", trunc_normal_tensor({dim, dim}, sigma, rng));
  w.add(prefix + ".bq", Tensor::zeros({dim}));
  w.add(prefix + ".wk", trunc_normal_tensor({dim, dim}, sigma, rng));
  w.add(prefix + ".bk", Tensor::zeros({dim}));
  w.add(prefix + ".wv", trunc_normal_tensor({dim, dim}, sigma, rng));
  w.add(prefix + ".bv", Tensor::zeros({dim}));
  w.add(prefix + ".wo",
        zero_out ? Tensor::zeros({dim, dim}) : trunc_normal_tensor({dim, dim}, sigma, rng));
  w.add(prefix + ".bo", Tensor::zeros({dim}));
}

void add_layernorm(Weights& w, const std::string& prefix, int dim) {
  w.add(prefix + ".g", Tensor::full({dim}, 1.0));
  w.add(prefix + ".b", Tensor::zeros({dim}));
}

void add_mlp(Weights& w, const std::string& prefix, int dim, int ratio, Rng& rng, bool zero_out) {
  const double sigma = 0.02;
  w.add(prefix + ".w1", trunc_normal_tensor({dim, dim * ratio}, sigma, rng));
  w.add(prefix + ".b1", Tensor::zeros({dim * ratio}));
  w.add(prefix + ".w2", zero_out ? Tensor::zeros({dim * ratio, dim})
                                 : trunc_normal_tensor({dim * ratio, dim}, sigma, rng));
  w.add(prefix + ".b2", Tensor::zeros({dim}));
}

// DecBlock-style parameter bundle: self attention, cross attention (with
// separate norms for the query and the fused secondary tokens), MLP.
void add_fuse_block(Weights& w, const std::string& prefix, int dim, int ratio, Rng& rng,
                    bool zero_out) {
  add_layernorm(w, prefix + ".ln1", dim);
  add_attention(w, prefix + ".self", dim, rng, zero_out);
  add_layernorm(w, prefix + ".lnq", dim);
  add_layernorm(w, prefix + ".lnkv", dim);
  add_attention(w, prefix + ".cross", dim, rng, zero_out);
  add_layernorm(w, prefix + ".ln2", dim);
  add_mlp(w, prefix + ".mlp", dim, ratio, rng, zero_out);
}

void add_pcd_head(Weights& w, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  const double sigma = 0.02;
  int p = cfg.patch, c = cfg.head_conv_channels;
  w.add(prefix + ".lin.w", trunc_normal_tensor({cfg.dec_dim, p * p * 4}, sigma, rng));
  w.add(prefix + ".lin.b", Tensor::zeros({p * p * 4}));
  int chans[5] = {6, c, c, c, 3};
  int ks[4] = {3, 5, 5, 3};
  for (int i = 0; i < 4; ++i) {
    w.add(prefix + ".conv" + std::to_string(i) + ".w",
          trunc_normal_tensor({chans[i + 1], chans[i], ks[i], ks[i]}, sigma, rng));
    w.add(prefix + ".conv" + std::to_string(i) + ".b", Tensor::zeros({chans[i + 1]}));
  }
}

void add_gs_head(Weights& w, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
  int p = cfg.patch;
  w.add(prefix + ".lin.w", trunc_normal_tensor({cfg.dec_dim, p * p * 8}, 0.02, rng));
  w.add(prefix + ".lin.b", Tensor::zeros({p * p * 8}));
}

}  // namespace

Weights init_weights(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Weights w;
  const double sigma = 0.02;
  int p = cfg.patch;

  w.add("enc.patch.w", trunc_normal_tensor({3 * p * p, cfg.enc_dim}, sigma, rng));
  w.add("enc.patch.b", Tensor::zeros({cfg.enc_dim}));
  for (int i = 0; i < cfg.enc_blocks; ++i) {
    std::string pre = "enc.blk" + std::to_string(i);
    add_layernorm(w, pre + ".ln1", cfg.enc_dim);
    add_attention(w, pre + ".attn", cfg.enc_dim, rng, false);
    add_layernorm(w, pre + ".ln2", cfg.enc_dim);
    add_mlp(w, pre + ".mlp", cfg.enc_dim, cfg.mlp_ratio, rng, false);
  }
  w.add("dec.proj.w", trunc_normal_tensor({cfg.enc_dim, cfg.dec_dim}, sigma, rng));
  w.add("dec.proj.b", Tensor::zeros({cfg.dec_dim}));
  for (int d = 0; d < cfg.dec_blocks; ++d) {
    add_fuse_block(w, "dec.ref.blk" + std::to_string(d), cfg.dec_dim, cfg.mlp_ratio, rng, false);
    add_fuse_block(w, "dec.src.blk" + std::to_string(d), cfg.dec_dim, cfg.mlp_ratio, rng, false);
    // Residual branches of the path-fusion block start at exactly zero, so a
    // fresh multi-path model reproduces the single-path network bit for bit.
    add_fuse_block(w, "crb.blk" + std::to_string(d), cfg.dec_dim, cfg.mlp_ratio, rng, true);
  }
  add_pcd_head(w, "head.ref.pcd", cfg, rng);
  add_pcd_head(w, "head.src.pcd", cfg, rng);
  if (cfg.gs_head) {
    add_gs_head(w, "head.ref.gs", cfg, rng);
    add_gs_head(w, "head.src.gs", cfg, rng);
  }
  return w;
}

ParamBinder::ParamBinder(Graph& g, const Weights& w) {
  for (const auto& [name, t] : w.params) {
    Tensor bound = g.leaf(t);
    nodes_[name] = bound.node;
    bound_[name] = std::move(bound);
  }
}

ParamBinder::ParamBinder(const Weights& w) {
  for (const auto& [name, t] : w.params) bound_[name] = t;
}

const Tensor& ParamBinder::operator()(const std::string& name) const {
  auto it = bound_.find(name);
  if (it == bound_.end()) throw std::invalid_argument("binder: unknown parameter " + name);
  return it->second;
}

Tensor positional_encoding(int h, int w, int dim) {
  if (dim % 4 != 0) throw std::invalid_argument("positional_encoding: dim must be divisible by 4");
  Tensor pe = Tensor::zeros({h * w, dim});
  int quarter = dim / 4;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t row = (size_t)(y * w + x) * dim;
      for (int i = 0; i < quarter; ++i) {
        double freq = std::pow(10000.0, -(double)i / quarter);
        pe.at(row + 2 * i) = std::sin(y * freq);
        pe.at(row + 2 * i + 1) = std::cos(y * freq);
        pe.at(row + dim / 2 + 2 * i) = std::sin(x * freq);
        pe.at(row + dim / 2 + 2 * i + 1) = std::cos(x * freq);
      }
    }
  return pe;
}

namespace {

AttentionWeights attn_weights(const ParamBinder& w, const std::string& prefix) {
  return AttentionWeights{w(prefix + ".wq"), w(prefix + ".bq"), w(prefix + ".wk"),
                          w(prefix + ".bk"), w(prefix + ".wv"), w(prefix + ".bv"),
                          w(prefix + ".wo"), w(prefix + ".bo")};
}

Tensor mlp_forward(const Tensor& x, const ParamBinder& w, const std::string& prefix) {
  Tensor h = gelu(linear(x, w(prefix + ".w1"), w(prefix + ".b1")));
  return linear(h, w(prefix + ".w2"), w(prefix + ".b2"));
}

Tensor ln(const Tensor& x, const ParamBinder& w, const std::string& prefix) {
  return layer_norm(x, w(prefix + ".g"), w(prefix + ".b"));
}

// Shared sublayer stack of DecBlock and CrossRefViewBlock: pre-norm
// self-attention on the primary tokens, cross-attention against the
// concatenated secondary tokens, then the MLP, all with residuals.
Tensor fuse_block(const Tensor& primary, const std::vector<Tensor>& secondary,
                  const std::string& prefix, int heads, const ParamBinder& w) {
  Tensor x = primary;
  Tensor q = ln(x, w, prefix + ".ln1");
  x = add(x, mh_attention(q, q, heads, attn_weights(w, prefix + ".self")));
  Tensor sec = secondary.size() == 1 ? secondary[0] : concat_rows(secondary);
  x = add(x, mh_attention(ln(x, w, prefix + ".lnq"), ln(sec, w, prefix + ".lnkv"), heads,
                          attn_weights(w, prefix + ".cross")));
  x = add(x, mlp_forward(ln(x, w, prefix + ".ln2"), w, prefix + ".mlp"));
  return x;
}

}  // namespace

std::vector<TokenGrid> encode_views(const std::vector<Tensor>& images, const ParamBinder& w,
                                    const ModelConfig& cfg) {
  if (images.empty()) throw std::invalid_argument("encode_views: no views");
  for (const Tensor& im : images)
    if (im.shape != Shape{3, cfg.image_size, cfg.image_size})
      throw std::invalid_argument("encode_views: image resolution mismatch, want " +
                                  shape_str({3, cfg.image_size, cfg.image_size}) + " got " +
                                  shape_str(im.shape));
  int g = cfg.grid();
  Tensor pe = positional_encoding(g, g, cfg.enc_dim);
  std::vector<TokenGrid> out;
  out.reserve(images.size());
  for (const Tensor& im : images) {
    Tensor tok = linear(extract_patches(im, cfg.patch), w("enc.patch.w"), w("enc.patch.b"));
    tok = add(tok, pe);
    for (int i = 0; i < cfg.enc_blocks; ++i) {
      std::string pre = "enc.blk" + std::to_string(i);
      Tensor q = ln(tok, w, pre + ".ln1");
      tok = add(tok, mh_attention(q, q, cfg.enc_heads, attn_weights(w, pre + ".attn")));
      tok = add(tok, mlp_forward(ln(tok, w, pre + ".ln2"), w, pre + ".mlp"));
    }
    out.push_back(TokenGrid{tok, g, g});
  }
  return out;
}

TokenGrid dec_block(const TokenGrid& primary, const std::vector<TokenGrid>& secondary,
                    bool ref_kind, int layer, const ParamBinder& w, const ModelConfig& cfg) {
  if (secondary.empty()) throw std::invalid_argument("dec_block: empty secondary set");
  std::vector<Tensor> sec;
  sec.reserve(secondary.size());
  for (const TokenGrid& t : secondary) sec.push_back(t.tokens);
  std::string prefix =
      (ref_kind ? "dec.ref.blk" : "dec.src.blk") + std::to_string(layer);
  return TokenGrid{fuse_block(primary.tokens, sec, prefix, cfg.dec_heads, w), primary.h,
                   primary.w};
}

TokenGrid cross_ref_view_block(const TokenGrid& g, const std::vector<TokenGrid>& others,
                               int layer, const ParamBinder& w, const ModelConfig& cfg) {
  if (others.empty()) return g;  // M = 1: nothing to fuse
  std::vector<Tensor> sec;
  sec.reserve(others.size());
  for (const TokenGrid& t : others) sec.push_back(t.tokens);
  return TokenGrid{
      fuse_block(g.tokens, sec, "crb.blk" + std::to_string(layer), cfg.dec_heads, w), g.h, g.w};
}

HeadOutput head_pcd(const TokenGrid& tokens, const Tensor& image, bool ref_kind,
                    const ParamBinder& w, const ModelConfig& cfg) {
  std::string prefix = ref_kind ? "head.ref.pcd" : "head.src.pcd";
  Tensor raw = linear(tokens.tokens, w(prefix + ".lin.w"), w(prefix + ".lin.b"));
  Tensor full = pixel_shuffle(tokens_to_chw(raw, tokens.h, tokens.w), cfg.patch);
  Tensor coarse = slice_chan(full, 0, 3);
  Tensor conf_raw = reshape(slice_chan(full, 3, 4), {cfg.image_size * cfg.image_size});

  Tensor h = concat_chan(coarse, image);
  for (int i = 0; i < 4; ++i) {
    std::string c = prefix + ".conv" + std::to_string(i);
    h = add_chan_bias(conv2d_s1(h, w(c + ".w")), w(c + ".b"));
    if (i < 3) h = gelu(h);
  }
  HeadOutput out;
  out.pointmap = add(h, coarse);
  out.conf = add_const(exp_t(conf_raw), 1.0);
  return out;
}

void head_gs(HeadOutput& out, const TokenGrid& tokens, bool ref_kind, const ParamBinder& w,
             const ModelConfig& cfg) {
  if (!cfg.gs_head) throw std::invalid_argument("head_gs: gs head disabled in config");
  std::string prefix = ref_kind ? "head.ref.gs" : "head.src.gs";
  Tensor raw = linear(tokens.tokens, w(prefix + ".lin.w"), w(prefix + ".lin.b"));
  Tensor full = pixel_shuffle(tokens_to_chw(raw, tokens.h, tokens.w), cfg.patch);
  int n = cfg.image_size * cfg.image_size;

  out.gs_scale =
      scale_const(softplus(chw_to_tokens(slice_chan(full, 0, 3))), cfg.gs_base_scale);

  // w-component offset keeps the quaternion norm away from zero at init
  Tensor q = chw_to_tokens(slice_chan(full, 3, 7));
  Tensor offset = Tensor::zeros({n, 4});
  for (int i = 0; i < n; ++i) offset.at((size_t)i * 4) = 1.0;
  q = add(q, offset);
  Tensor inv_norm = reciprocal(sqrt_eps(sum_rows(mul(q, q)), 1e-24));
  out.gs_quat = scale_rows(q, inv_norm);

  out.gs_opacity = sigmoid(reshape(slice_chan(full, 7, 8), {n}));
}

std::vector<HeadOutput> forward_single_path(const std::vector<Tensor>& images, int ref_index,
                                            const ParamBinder& w, const ModelConfig& cfg) {
  auto paths = forward_multi_path(images, {ref_index}, w, cfg);
  return std::move(paths[0]);
}

std::vector<std::vector<HeadOutput>> forward_multi_path(const std::vector<Tensor>& images,
                                                        const std::vector<int>& refs,
                                                        const ParamBinder& w,
                                                        const ModelConfig& cfg) {
  int n = (int)images.size();
  int m = (int)refs.size();
  if (n < 2) throw std::invalid_argument("forward: need at least 2 views");
  if (m < 1) throw std::invalid_argument("forward: need at least 1 reference view");
  for (int i = 0; i < m; ++i) {
    if (refs[i] < 0 || refs[i] >= n) throw std::invalid_argument("forward: reference out of range");
    for (int j = i + 1; j < m; ++j)
      if (refs[i] == refs[j]) throw std::invalid_argument("forward: duplicate reference indices");
  }

  std::vector<TokenGrid> enc = encode_views(images, w, cfg);
  std::vector<TokenGrid> f0;
  f0.reserve(n);
  for (const TokenGrid& t : enc)
    f0.push_back(TokenGrid{linear(t.tokens, w("dec.proj.w"), w("dec.proj.b")), t.h, t.w});

  // tokens[m][v]: per-path, per-view streams; every path starts from the
  // shared projected encoder tokens
  std::vector<std::vector<TokenGrid>> tokens(m, f0);
  for (int d = 0; d < cfg.dec_blocks; ++d) {
    std::vector<std::vector<TokenGrid>> g(m);
    for (int mi = 0; mi < m; ++mi) {
      g[mi].reserve(n);
      for (int v = 0; v < n; ++v) {
        std::vector<TokenGrid> secondary;
        secondary.reserve(n - 1);
        for (int u = 0; u < n; ++u)
          if (u != v) secondary.push_back(tokens[mi][u]);
        g[mi].push_back(dec_block(tokens[mi][v], secondary, v == refs[mi], d, w, cfg));
      }
    }
    for (int mi = 0; mi < m; ++mi)
      for (int v = 0; v < n; ++v) {
        std::vector<TokenGrid> others;
        others.reserve(m - 1);
        for (int mj = 0; mj < m; ++mj)
          if (mj != mi) others.push_back(g[mj][v]);
        tokens[mi][v] = cross_ref_view_block(g[mi][v], others, d, w, cfg);
      }
  }

  std::vector<std::vector<HeadOutput>> out(m);
  for (int mi = 0; mi < m; ++mi) {
    out[mi].reserve(n);
    for (int v = 0; v < n; ++v) {
      bool ref_kind = v == refs[mi];
      HeadOutput ho = head_pcd(tokens[mi][v], images[v], ref_kind, w, cfg);
      if (cfg.gs_head) head_gs(ho, tokens[mi][v], ref_kind, w, cfg);
      out[mi].push_back(std::move(ho));
    }
  }
  return out;
}

}  // namespace mvrec
