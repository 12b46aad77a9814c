#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvrec/nn.hpp"
#include "mvrec/tensor.hpp"

namespace mvrec {

struct ModelConfig {
  int image_size = 32;
  int patch = 8;
  int enc_dim = 64;
  int enc_blocks = 2;
  int enc_heads = 4;
  int dec_dim = 64;
  int dec_blocks = 2;
  int dec_heads = 4;
  int mlp_ratio = 4;
  int n_paths = 2;  // reference views per forward (M)
  bool gs_head = false;
  int head_conv_channels = 16;
  double gs_base_scale = 0.05;  // s0 multiplier on the softplus scale output

  int grid() const { return image_size / patch; }
  int tokens_per_view() const { return grid() * grid(); }
  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Flat parameter registry keyed by dotted path. Creation order is kept so
// seeded initialization is reproducible; lookups go through the index.
struct Weights {
  std::vector<std::pair<std::string, Tensor>> params;
  std::map<std::string, int> index;

  void add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  bool has(const std::string& name) const { return index.count(name) != 0; }
  long long total_parameters() const;
};

Weights init_weights(const ModelConfig& cfg, uint64_t seed);

struct TokenGrid {
  Tensor tokens;  // {h*w, d}
  int h = 0, w = 0;
};

// Binds every weight as a leaf of one graph so gradients can be read back
// per parameter name after backward(). The graph-less constructor binds
// plain values for inference; nothing is taped.
class ParamBinder {
 public:
  ParamBinder(Graph& g, const Weights& w);
  explicit ParamBinder(const Weights& w);
  const Tensor& operator()(const std::string& name) const;
  const std::map<std::string, int>& leaf_nodes() const { return nodes_; }

 private:
  std::map<std::string, Tensor> bound_;
  std::map<std::string, int> nodes_;
};

struct HeadOutput {
  Tensor pointmap;    // {3,H,W}
  Tensor conf;        // {H*W}, C = 1 + exp(raw) so C > 1
  Tensor gs_scale;    // {H*W,3} softplus(raw) * s0      (gs head only)
  Tensor gs_quat;     // {H*W,4} unit quaternions (w,x,y,z)
  Tensor gs_opacity;  // {H*W}  sigmoid(raw)
};

std::vector<TokenGrid> encode_views(const std::vector<Tensor>& images, const ParamBinder& w,
                                    const ModelConfig& cfg);

TokenGrid dec_block(const TokenGrid& primary, const std::vector<TokenGrid>& secondary,
                    bool ref_kind, int layer, const ParamBinder& w, const ModelConfig& cfg);

// Fuses one view's tokens across the other decoder paths; identity when
// others is empty (M = 1).
TokenGrid cross_ref_view_block(const TokenGrid& g, const std::vector<TokenGrid>& others,
                               int layer, const ParamBinder& w, const ModelConfig& cfg);

HeadOutput head_pcd(const TokenGrid& tokens, const Tensor& image, bool ref_kind,
                    const ParamBinder& w, const ModelConfig& cfg);

void head_gs(HeadOutput& out, const TokenGrid& tokens, bool ref_kind, const ParamBinder& w,
             const ModelConfig& cfg);

std::vector<HeadOutput> forward_single_path(const std::vector<Tensor>& images, int ref_index,
                                            const ParamBinder& w, const ModelConfig& cfg);

// One output list per path; path m anchors every view's pointmap in the
// camera frame of reference view refs[m].
std::vector<std::vector<HeadOutput>> forward_multi_path(const std::vector<Tensor>& images,
                                                        const std::vector<int>& refs,
                                                        const ParamBinder& w,
                                                        const ModelConfig& cfg);

// Fixed 2D sin/cos table added to encoder tokens, identical for every view.
Tensor positional_encoding(int h, int w, int dim);

}  // namespace mvrec
