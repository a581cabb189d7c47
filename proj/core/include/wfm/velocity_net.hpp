// Multi-scale velocity network: per-scale stems feeding a residual
// U-Net encoder-decoder with FiLM/AdaGN conditioning from a fused
// (tau, kappa, context) embedding, one prediction head per wavelet scale,
// and hand-written exact reverse-mode gradients for every operator.
//
// The (C, 4, H_j, W_j) sub-band blocks are folded to 4C flat 2-D channels
// at the stems and heads; convolutions use periodic padding, matching the
// torus domains the data lives on.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wfm/field.hpp"
#include "wfm/flow.hpp"
#include "wfm/wavelet.hpp"

namespace wfm {

// Batched feature map (B, C, H, W), row-major.
struct Grid {
  int batch = 0, channels = 0, height = 0, width = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int b, int c, int h, int w)
      : batch(b), channels(c), height(h), width(w),
        v(static_cast<std::size_t>(b) * c * h * w, 0.0) {}
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double* at(int b, int c) { return v.data() + (static_cast<std::size_t>(b) * channels + c) * plane(); }
  const double* at(int b, int c) const {
    return v.data() + (static_cast<std::size_t>(b) * channels + c) * plane();
  }
  bool same_shape(const Grid& o) const {
    return batch == o.batch && channels == o.channels && height == o.height && width == o.width;
  }
};

// Batched vectors (B, dim).
struct Vecs {
  int batch = 0, dim = 0;
  std::vector<double> v;

  Vecs() = default;
  Vecs(int b, int d) : batch(b), dim(d), v(static_cast<std::size_t>(b) * d, 0.0) {}
  double* at(int b) { return v.data() + static_cast<std::size_t>(b) * dim; }
  const double* at(int b) const { return v.data() + static_cast<std::size_t>(b) * dim; }
};

struct NetConfig {
  int n_scales = 1;          // J
  int n_levels = 1;          // encoder/decoder depth, >= n_scales
  int init_dim = 40;         // C_base, multiple of the group count
  int blocks_per_level = 3;  // residual blocks per level
  int embed_dim = 256;       // d
  int channel_cap = 8;       // widths double per level up to cap * C_base
  int channels = 1;          // physical channels C; stems see 2C*4 inputs
  int context_len = 3;       // L past frames
  int kappa_dim = 1;
  int groups = 8;            // GroupNorm group count

  void validate() const;
  int width(int level) const;                 // level in [1, n_levels]
  int stem_channels() const { return 8 * channels; }  // 2C * 4 folded
  int head_channels() const { return 4 * channels; }
};

// Named parameter tensors; shapes are a pure function of NetConfig.
struct ParamStore {
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
  };
  std::vector<Entry> entries;

  std::size_t add(const std::string& name, std::vector<int> shape);
  std::size_t find(const std::string& name) const;  // throws if absent
  std::size_t total_parameters() const;
  bool all_finite() const;
  ParamStore zeros_like() const;
};

// Per-invocation activation cache; never shared between threads.
struct Tape {
  std::vector<Grid> grids;
  std::vector<Vecs> vecs;
};

// Inputs for one batched forward pass.
struct NetInputs {
  std::vector<Grid> z;        // per scale j: (B, 8C, H_j, W_j)
  std::vector<double> tau;    // B
  Vecs kappa;                 // (B, kappa_dim)
  std::vector<Grid> context;  // L grids of (B, C, H, W), oldest first
};

class VelocityNet {
 public:
  explicit VelocityNet(const NetConfig& config);
  ~VelocityNet();
  VelocityNet(const VelocityNet&) = delete;
  VelocityNet& operator=(const VelocityNet&) = delete;

  const NetConfig& config() const { return config_; }
  // Parameter skeleton (zero values) with all names and shapes.
  ParamStore make_params() const;
  std::size_t parameter_count() const;

  // Fan-in uniform kernels, zero biases, zero FiLM shifts, zero final
  // head kernels: the network output is exactly zero at initialization.
  ParamStore init_params(std::uint64_t seed) const;
  // Every tensor drawn fan-in uniform (gradient checks need live paths).
  ParamStore init_params_dense(std::uint64_t seed) const;

  // Raw (sin, cos) pairs at geometrically spaced frequencies 1..1e4.
  static std::vector<double> sinusoidal_features(double tau, int dim);

  // Fresh activation workspace sized for this architecture.
  Tape make_tape() const;

  // c = MLP(sin-embed(tau)) + Linear(kappa) + ContextPool(context)
  Vecs embed_condition(const NetInputs& in, const ParamStore& params, Tape& tape) const;

  // Velocity estimates per scale: (B, 4C, H_j, W_j) each.
  std::vector<Grid> forward(const std::vector<Grid>& z, const Vecs& cond,
                            const ParamStore& params, Tape& tape) const;

  struct BackwardResult {
    std::vector<Grid> grad_z;
    Vecs grad_cond;
  };
  // Exact reverse-mode gradients; accumulates parameter grads into
  // `grads` (same skeleton as make_params()).
  BackwardResult backward(const std::vector<Grid>& grad_out, const ParamStore& params,
                          const Tape& tape, ParamStore& grads) const;
  // Continues from grad_cond into the embedding parameters.
  void embed_backward(const Vecs& grad_cond, const ParamStore& params, const Tape& tape,
                      ParamStore& grads) const;

 private:
  NetConfig config_;
  struct Impl;
  Impl* impl_;
};

// Folds scale j of a pyramid into a (1, 4C, H_j, W_j) grid slice.
void fold_scale(const WaveletPyramid& p, int j, double* dst);
void unfold_scale(const double* src, WaveletPyramid& p, int j);

// Checkpoint: manifest (config, seed, step) + one f64 tensor file per
// named parameter under <dir>/params/. Loading validates every shape.
void save_checkpoint(const std::string& dir, const NetConfig& config, const ParamStore& params,
                     std::uint64_t seed, long step, const std::string& wavelet = "haar");
struct Checkpoint {
  NetConfig config;
  ParamStore params;
  std::uint64_t seed = 0;
  long step = 0;
  std::string wavelet = "haar";
};
Checkpoint load_checkpoint(const std::string& dir);

// Adapter: binds a network + parameters as the sampler's velocity field.
class NetVelocityField final : public VelocityField {
 public:
  NetVelocityField(const VelocityNet& net, const ParamStore& params)
      : net_(net), params_(params) {}
  WaveletPyramid velocity(const WaveletPyramid& current, const WaveletPyramid& state, double tau,
                          const ParamVector& kappa, const std::vector<Field>& context) const override;

 private:
  const VelocityNet& net_;
  const ParamStore& params_;
};

}  // namespace wfm
