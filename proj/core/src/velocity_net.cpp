#include "wfm/velocity_net.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "wfm/rng.hpp"
#include "wfm/tensor_io.hpp"

namespace wfm {

// ---------------------------------------------------------------------------
// NetConfig / ParamStore
// ---------------------------------------------------------------------------

void NetConfig::validate() const {
  if (n_scales < 1) throw std::invalid_argument("NetConfig: n_scales must be >= 1");
  if (n_levels < n_scales) throw std::invalid_argument("NetConfig: n_levels must be >= n_scales");
  if (init_dim < groups || init_dim % groups != 0)
    throw std::invalid_argument("NetConfig: init_dim must be a positive multiple of the group count");
  if (blocks_per_level < 1) throw std::invalid_argument("NetConfig: blocks_per_level must be >= 1");
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw std::invalid_argument("NetConfig: embed_dim must be even and >= 2");
  if (channel_cap < 1) throw std::invalid_argument("NetConfig: channel_cap must be >= 1");
  if (channels < 1) throw std::invalid_argument("NetConfig: channels must be >= 1");
  if (context_len < 0) throw std::invalid_argument("NetConfig: context_len must be >= 0");
  if (kappa_dim < 1) throw std::invalid_argument("NetConfig: kappa_dim must be >= 1");
}

int NetConfig::width(int level) const {
  const long w = static_cast<long>(init_dim) << (level - 1);
  return static_cast<int>(std::min<long>(w, static_cast<long>(channel_cap) * init_dim));
}

std::size_t ParamStore::add(const std::string& name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  entries.push_back({name, std::move(shape), std::vector<double>(n, 0.0)});
  return entries.size() - 1;
}

std::size_t ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return i;
  throw std::invalid_argument("ParamStore: unknown parameter " + name);
}

std::size_t ParamStore::total_parameters() const {
  std::size_t n = 0;
  for (const Entry& e : entries) n += e.value.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const Entry& e : entries)
    for (double v : e.value)
      if (!std::isfinite(v)) return false;
  return true;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  out.entries.reserve(entries.size());
  for (const Entry& e : entries)
    out.entries.push_back({e.name, e.shape, std::vector<double>(e.value.size(), 0.0)});
  return out;
}

// ---------------------------------------------------------------------------
// Layer primitives
// ---------------------------------------------------------------------------

namespace {

enum class Init { FanIn, Zero, FilmProj };

struct Builder {
  ParamStore* store = nullptr;
  int grid_slots = 0;
  int vec_slots = 0;
  // init recipe per entry: kind and fan-in
  std::vector<Init> kinds;
  std::vector<int> fan_ins;
  std::vector<int> film_rows;  // for FilmProj: rows < film_rows get fan-in, rest zero

  std::size_t param(const std::string& name, std::vector<int> shape, Init kind, int fan_in,
                    int rows = 0) {
    const std::size_t idx = store->add(name, std::move(shape));
    kinds.push_back(kind);
    fan_ins.push_back(fan_in);
    film_rows.push_back(rows);
    return idx;
  }
  int grid_slot() { return grid_slots++; }
  int vec_slot() { return vec_slots++; }
};

inline int wrap(int i, int n) {
  if (i < 0) return i + n;
  if (i >= n) return i - n;
  return i;
}

struct Conv2d {
  int in_c = 0, out_c = 0, ksize = 1, stride = 1;
  std::size_t w_idx = 0, b_idx = 0;
  int x_slot = -1;

  void build(Builder& b, const std::string& name, int in, int out, int k, int s,
             Init weight_init = Init::FanIn) {
    in_c = in;
    out_c = out;
    ksize = k;
    stride = s;
    w_idx = b.param(name + ".w", {out, in, k, k}, weight_init, in * k * k);
    b_idx = b.param(name + ".b", {out}, Init::Zero, 0);
    x_slot = b.grid_slot();
  }

  Grid forward(const Grid& x, const ParamStore& P, Tape& t) const {
    if (x.channels != in_c) throw std::invalid_argument("conv: channel mismatch");
    if (stride == 2 && (x.height % 2 != 0 || x.width % 2 != 0))
      throw std::invalid_argument("conv: stride-2 needs even dims");
    const int H = x.height, W = x.width;
    const int Ho = H / stride, Wo = W / stride;
    const int pad = ksize / 2;
    Grid y(x.batch, out_c, Ho, Wo);
    const double* wp = P.entries[w_idx].value.data();
    const double* bp = P.entries[b_idx].value.data();

    for (int b = 0; b < x.batch; ++b) {
      for (int o = 0; o < out_c; ++o) {
        double* out = y.at(b, o);
        const double bias = bp[o];
        for (std::size_t i = 0; i < y.plane(); ++i) out[i] = bias;
        for (int c = 0; c < in_c; ++c) {
          const double* in = x.at(b, c);
          for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
              const double wv = wp[((static_cast<std::size_t>(o) * in_c + c) * ksize + ky) * ksize + kx];
              const int oy = ky - pad, ox = kx - pad;
              for (int yy = 0; yy < Ho; ++yy) {
                const double* irow = in + static_cast<std::size_t>(wrap(yy * stride + oy, H)) * W;
                double* orow = out + static_cast<std::size_t>(yy) * Wo;
                if (stride == 1) {
                  const int x_lo = std::max(0, -ox);
                  const int x_hi = std::min(W, W - ox);
                  for (int xx = 0; xx < x_lo; ++xx) orow[xx] += wv * irow[xx + ox + W];
                  for (int xx = x_lo; xx < x_hi; ++xx) orow[xx] += wv * irow[xx + ox];
                  for (int xx = x_hi; xx < W; ++xx) orow[xx] += wv * irow[xx + ox - W];
                } else {
                  for (int xx = 0; xx < Wo; ++xx) orow[xx] += wv * irow[wrap(xx * 2 + ox, W)];
                }
              }
            }
          }
        }
      }
    }
    t.grids[x_slot] = x;
    return y;
  }

  Grid backward(const Grid& gy, const ParamStore& P, const Tape& t, ParamStore& G) const {
    const Grid& x = t.grids[x_slot];
    const int H = x.height, W = x.width;
    const int Ho = gy.height, Wo = gy.width;
    const int pad = ksize / 2;
    const double* wp = P.entries[w_idx].value.data();
    double* gw = G.entries[w_idx].value.data();
    double* gb = G.entries[b_idx].value.data();
    Grid gx(x.batch, in_c, H, W);

    for (int b = 0; b < x.batch; ++b) {
      // bias and weight grads
      for (int o = 0; o < out_c; ++o) {
        const double* g = gy.at(b, o);
        double acc = 0.0;
        for (std::size_t i = 0; i < gy.plane(); ++i) acc += g[i];
        gb[o] += acc;
        for (int c = 0; c < in_c; ++c) {
          const double* in = x.at(b, c);
          for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
              const int oy = ky - pad, ox = kx - pad;
              double wacc = 0.0;
              for (int yy = 0; yy < Ho; ++yy) {
                const double* irow = in + static_cast<std::size_t>(wrap(yy * stride + oy, H)) * W;
                const double* grow = g + static_cast<std::size_t>(yy) * Wo;
                if (stride == 1) {
                  const int x_lo = std::max(0, -ox);
                  const int x_hi = std::min(W, W - ox);
                  for (int xx = 0; xx < x_lo; ++xx) wacc += grow[xx] * irow[xx + ox + W];
                  for (int xx = x_lo; xx < x_hi; ++xx) wacc += grow[xx] * irow[xx + ox];
                  for (int xx = x_hi; xx < W; ++xx) wacc += grow[xx] * irow[xx + ox - W];
                } else {
                  for (int xx = 0; xx < Wo; ++xx) wacc += grow[xx] * irow[wrap(xx * 2 + ox, W)];
                }
              }
              gw[((static_cast<std::size_t>(o) * in_c + c) * ksize + ky) * ksize + kx] += wacc;
            }
          }
        }
      }
      // input grads: per input channel, fixed o/tap order
      for (int c = 0; c < in_c; ++c) {
        double* gxp = gx.at(b, c);
        for (int o = 0; o < out_c; ++o) {
          const double* g = gy.at(b, o);
          for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
              const double wv = wp[((static_cast<std::size_t>(o) * in_c + c) * ksize + ky) * ksize + kx];
              const int oy = ky - pad, ox = kx - pad;
              for (int yy = 0; yy < Ho; ++yy) {
                double* gxrow = gxp + static_cast<std::size_t>(wrap(yy * stride + oy, H)) * W;
                const double* grow = g + static_cast<std::size_t>(yy) * Wo;
                if (stride == 1) {
                  const int x_lo = std::max(0, -ox);
                  const int x_hi = std::min(W, W - ox);
                  for (int xx = 0; xx < x_lo; ++xx) gxrow[xx + ox + W] += wv * grow[xx];
                  for (int xx = x_lo; xx < x_hi; ++xx) gxrow[xx + ox] += wv * grow[xx];
                  for (int xx = x_hi; xx < W; ++xx) gxrow[xx + ox - W] += wv * grow[xx];
                } else {
                  for (int xx = 0; xx < Wo; ++xx) gxrow[wrap(xx * 2 + ox, W)] += wv * grow[xx];
                }
              }
            }
          }
        }
      }
    }
    return gx;
  }
};

struct GroupNorm {
  int channels = 0, groups = 8;
  int xhat_slot = -1, stat_slot = -1;
  static constexpr double kEps = 1e-5;

  void build(Builder& b, int ch, int g) {
    channels = ch;
    groups = g;
    if (ch % g != 0) throw std::invalid_argument("GroupNorm: channels not divisible by groups");
    xhat_slot = b.grid_slot();
    stat_slot = b.vec_slot();
  }

  Grid forward(const Grid& x, Tape& t) const {
    const int cpg = channels / groups;
    const std::size_t group_n = static_cast<std::size_t>(cpg) * x.plane();
    Grid y(x.batch, channels, x.height, x.width);
    Vecs stats(x.batch, groups);
    for (int b = 0; b < x.batch; ++b) {
      for (int g = 0; g < groups; ++g) {
        const double* in = x.at(b, g * cpg);
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < group_n; ++i) {
          sum += in[i];
          sq += in[i] * in[i];
        }
        const double mean = sum / static_cast<double>(group_n);
        const double var = sq / static_cast<double>(group_n) - mean * mean;
        const double inv = 1.0 / std::sqrt(var + kEps);
        stats.at(b)[g] = inv;
        double* out = y.at(b, g * cpg);
        for (std::size_t i = 0; i < group_n; ++i) out[i] = (in[i] - mean) * inv;
      }
    }
    t.grids[xhat_slot] = y;
    t.vecs[stat_slot] = std::move(stats);
    return y;
  }

  Grid backward(const Grid& gy, const Tape& t) const {
    const Grid& xhat = t.grids[xhat_slot];
    const Vecs& stats = t.vecs[stat_slot];
    const int cpg = channels / groups;
    const std::size_t group_n = static_cast<std::size_t>(cpg) * gy.plane();
    Grid gx(gy.batch, channels, gy.height, gy.width);
    for (int b = 0; b < gy.batch; ++b) {
      for (int g = 0; g < groups; ++g) {
        const double* gp = gy.at(b, g * cpg);
        const double* xh = xhat.at(b, g * cpg);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < group_n; ++i) {
          s1 += gp[i];
          s2 += gp[i] * xh[i];
        }
        const double inv = stats.at(b)[g];
        const double m1 = s1 / static_cast<double>(group_n);
        const double m2 = s2 / static_cast<double>(group_n);
        double* out = gx.at(b, g * cpg);
        for (std::size_t i = 0; i < group_n; ++i) out[i] = inv * (gp[i] - m1 - xh[i] * m2);
      }
    }
    return gx;
  }
};

// Feature-wise linear modulation: out = x * (1 + s) + t with [s; t] a
// learned projection of the conditioning vector. Shift rows start at zero.
struct Film {
  int channels = 0, embed = 0;
  std::size_t w_idx = 0, b_idx = 0;
  int x_slot = -1, st_slot = -1;

  void build(Builder& b, const std::string& name, int ch, int d) {
    channels = ch;
    embed = d;
    w_idx = b.param(name + ".w", {2 * ch, d}, Init::FilmProj, d, ch);
    b_idx = b.param(name + ".b", {2 * ch}, Init::Zero, 0);
    x_slot = b.grid_slot();
    st_slot = b.vec_slot();
  }

  Grid forward(const Grid& x, const Vecs& cond, const ParamStore& P, Tape& t) const {
    const double* wp = P.entries[w_idx].value.data();
    const double* bp = P.entries[b_idx].value.data();
    Vecs st(x.batch, 2 * channels);
    for (int b = 0; b < x.batch; ++b) {
      const double* c = cond.at(b);
      double* o = st.at(b);
      for (int r = 0; r < 2 * channels; ++r) {
        double acc = bp[r];
        const double* wr = wp + static_cast<std::size_t>(r) * embed;
        for (int k = 0; k < embed; ++k) acc += wr[k] * c[k];
        o[r] = acc;
      }
    }
    Grid y(x.batch, channels, x.height, x.width);
    for (int b = 0; b < x.batch; ++b) {
      const double* stv = st.at(b);
      for (int ch = 0; ch < channels; ++ch) {
        const double scale = 1.0 + stv[ch], shift = stv[channels + ch];
        const double* in = x.at(b, ch);
        double* out = y.at(b, ch);
        for (std::size_t i = 0; i < x.plane(); ++i) out[i] = in[i] * scale + shift;
      }
    }
    t.grids[x_slot] = x;
    t.vecs[st_slot] = std::move(st);
    return y;
  }

  Grid backward(const Grid& gy, const Vecs& cond, const ParamStore& P, const Tape& t,
                ParamStore& G, Vecs& gcond) const {
    const Grid& x = t.grids[x_slot];
    const Vecs& st = t.vecs[st_slot];
    const double* wp = P.entries[w_idx].value.data();
    double* gw = G.entries[w_idx].value.data();
    double* gb = G.entries[b_idx].value.data();
    Grid gx(x.batch, channels, x.height, x.width);
    std::vector<double> gst(2 * channels);
    for (int b = 0; b < x.batch; ++b) {
      const double* stv = st.at(b);
      for (int ch = 0; ch < channels; ++ch) {
        const double scale = 1.0 + stv[ch];
        const double* g = gy.at(b, ch);
        const double* in = x.at(b, ch);
        double* out = gx.at(b, ch);
        double gs = 0.0, gt = 0.0;
        for (std::size_t i = 0; i < x.plane(); ++i) {
          out[i] = g[i] * scale;
          gs += g[i] * in[i];
          gt += g[i];
        }
        gst[ch] = gs;
        gst[channels + ch] = gt;
      }
      const double* c = cond.at(b);
      double* gc = gcond.at(b);
      for (int r = 0; r < 2 * channels; ++r) {
        const double gr = gst[r];
        gb[r] += gr;
        double* gwr = gw + static_cast<std::size_t>(r) * embed;
        const double* wr = wp + static_cast<std::size_t>(r) * embed;
        for (int k = 0; k < embed; ++k) {
          gwr[k] += gr * c[k];
          gc[k] += gr * wr[k];
        }
      }
    }
    return gx;
  }
};

struct SiluGrid {
  int x_slot = -1;
  void build(Builder& b) { x_slot = b.grid_slot(); }
  Grid forward(const Grid& x, Tape& t) const {
    Grid y(x.batch, x.channels, x.height, x.width);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x.v[i]));
      y.v[i] = x.v[i] * s;
    }
    t.grids[x_slot] = x;
    return y;
  }
  Grid backward(const Grid& gy, const Tape& t) const {
    const Grid& x = t.grids[x_slot];
    Grid gx(x.batch, x.channels, x.height, x.width);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x.v[i]));
      gx.v[i] = gy.v[i] * s * (1.0 + x.v[i] * (1.0 - s));
    }
    return gx;
  }
};

struct SiluVec {
  int x_slot = -1;
  void build(Builder& b) { x_slot = b.vec_slot(); }
  Vecs forward(const Vecs& x, Tape& t) const {
    Vecs y(x.batch, x.dim);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x.v[i]));
      y.v[i] = x.v[i] * s;
    }
    t.vecs[x_slot] = x;
    return y;
  }
  Vecs backward(const Vecs& gy, const Tape& t) const {
    const Vecs& x = t.vecs[x_slot];
    Vecs gx(x.batch, x.dim);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x.v[i]));
      gx.v[i] = gy.v[i] * s * (1.0 + x.v[i] * (1.0 - s));
    }
    return gx;
  }
};

struct LinearOp {
  int in = 0, out = 0;
  bool has_bias = true;
  std::size_t w_idx = 0, b_idx = 0;
  int x_slot = -1;

  void build(Builder& b, const std::string& name, int in_dim, int out_dim, bool bias) {
    in = in_dim;
    out = out_dim;
    has_bias = bias;
    w_idx = b.param(name + ".w", {out_dim, in_dim}, Init::FanIn, in_dim);
    if (bias) b_idx = b.param(name + ".b", {out_dim}, Init::Zero, 0);
    x_slot = b.vec_slot();
  }

  Vecs forward(const Vecs& x, const ParamStore& P, Tape& t) const {
    const double* wp = P.entries[w_idx].value.data();
    const double* bp = has_bias ? P.entries[b_idx].value.data() : nullptr;
    Vecs y(x.batch, out);
    for (int b = 0; b < x.batch; ++b) {
      const double* xin = x.at(b);
      double* yo = y.at(b);
      for (int r = 0; r < out; ++r) {
        double acc = bp ? bp[r] : 0.0;
        const double* wr = wp + static_cast<std::size_t>(r) * in;
        for (int k = 0; k < in; ++k) acc += wr[k] * xin[k];
        yo[r] = acc;
      }
    }
    t.vecs[x_slot] = x;
    return y;
  }

  Vecs backward(const Vecs& gy, const ParamStore& P, const Tape& t, ParamStore& G) const {
    const Vecs& x = t.vecs[x_slot];
    const double* wp = P.entries[w_idx].value.data();
    double* gw = G.entries[w_idx].value.data();
    double* gb = has_bias ? G.entries[b_idx].value.data() : nullptr;
    Vecs gx(x.batch, in);
    for (int b = 0; b < x.batch; ++b) {
      const double* xin = x.at(b);
      const double* g = gy.at(b);
      double* gxb = gx.at(b);
      for (int r = 0; r < out; ++r) {
        const double gr = g[r];
        if (gb) gb[r] += gr;
        double* gwr = gw + static_cast<std::size_t>(r) * in;
        const double* wr = wp + static_cast<std::size_t>(r) * in;
        for (int k = 0; k < in; ++k) {
          gwr[k] += gr * xin[k];
          gxb[k] += gr * wr[k];
        }
      }
    }
    return gx;
  }
};

struct ResBlock {
  GroupNorm gn1, gn2;
  Film film1, film2;
  SiluGrid act1, act2;
  Conv2d conv1, conv2;

  void build(Builder& b, const std::string& name, int width, int embed, int groups) {
    gn1.build(b, width, groups);
    film1.build(b, name + ".film1", width, embed);
    act1.build(b);
    conv1.build(b, name + ".conv1", width, width, 3, 1);
    gn2.build(b, width, groups);
    film2.build(b, name + ".film2", width, embed);
    act2.build(b);
    conv2.build(b, name + ".conv2", width, width, 3, 1);
  }

  Grid forward(const Grid& x, const Vecs& cond, const ParamStore& P, Tape& t) const {
    Grid h = gn1.forward(x, t);
    h = film1.forward(h, cond, P, t);
    h = act1.forward(h, t);
    h = conv1.forward(h, P, t);
    h = gn2.forward(h, t);
    h = film2.forward(h, cond, P, t);
    h = act2.forward(h, t);
    h = conv2.forward(h, P, t);
    for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += x.v[i];
    return h;
  }

  Grid backward(const Grid& gy, const Vecs& cond, const ParamStore& P, const Tape& t,
                ParamStore& G, Vecs& gcond) const {
    Grid g = conv2.backward(gy, P, t, G);
    g = act2.backward(g, t);
    g = film2.backward(g, cond, P, t, G, gcond);
    g = gn2.backward(g, t);
    g = conv1.backward(g, P, t, G);
    g = act1.backward(g, t);
    g = film1.backward(g, cond, P, t, G, gcond);
    g = gn1.backward(g, t);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += gy.v[i];
    return g;
  }
};

struct Head {
  GroupNorm gn;
  SiluGrid act;
  Conv2d conv;

  void build(Builder& b, const std::string& name, int width, int out_c, int groups) {
    gn.build(b, width, groups);
    act.build(b);
    conv.build(b, name + ".conv", width, out_c, 3, 1, Init::Zero);
  }
  Grid forward(const Grid& x, const ParamStore& P, Tape& t) const {
    Grid h = gn.forward(x, t);
    h = act.forward(h, t);
    return conv.forward(h, P, t);
  }
  Grid backward(const Grid& gy, const ParamStore& P, const Tape& t, ParamStore& G) const {
    Grid g = conv.backward(gy, P, t, G);
    g = act.backward(g, t);
    return gn.backward(g, t);
  }
};

Grid concat_channels(const Grid& a, const Grid& b) {
  Grid y(a.batch, a.channels + b.channels, a.height, a.width);
  for (int bb = 0; bb < a.batch; ++bb) {
    std::copy(a.at(bb, 0), a.at(bb, 0) + static_cast<std::size_t>(a.channels) * a.plane(),
              y.at(bb, 0));
    std::copy(b.at(bb, 0), b.at(bb, 0) + static_cast<std::size_t>(b.channels) * b.plane(),
              y.at(bb, a.channels));
  }
  return y;
}

void split_channels(const Grid& g, int c_first, Grid& first, Grid& second) {
  first = Grid(g.batch, c_first, g.height, g.width);
  second = Grid(g.batch, g.channels - c_first, g.height, g.width);
  for (int b = 0; b < g.batch; ++b) {
    std::copy(g.at(b, 0), g.at(b, 0) + static_cast<std::size_t>(c_first) * g.plane(),
              first.at(b, 0));
    std::copy(g.at(b, c_first),
              g.at(b, c_first) + static_cast<std::size_t>(g.channels - c_first) * g.plane(),
              second.at(b, 0));
  }
}

Grid nearest_up2(const Grid& x) {
  Grid y(x.batch, x.channels, 2 * x.height, 2 * x.width);
  for (int b = 0; b < x.batch; ++b) {
    for (int c = 0; c < x.channels; ++c) {
      const double* in = x.at(b, c);
      double* out = y.at(b, c);
      for (int yy = 0; yy < y.height; ++yy) {
        const double* irow = in + static_cast<std::size_t>(yy / 2) * x.width;
        double* orow = out + static_cast<std::size_t>(yy) * y.width;
        for (int xx = 0; xx < y.width; ++xx) orow[xx] = irow[xx / 2];
      }
    }
  }
  return y;
}

Grid nearest_up2_backward(const Grid& gy) {
  Grid gx(gy.batch, gy.channels, gy.height / 2, gy.width / 2);
  for (int b = 0; b < gy.batch; ++b) {
    for (int c = 0; c < gy.channels; ++c) {
      const double* g = gy.at(b, c);
      double* out = gx.at(b, c);
      for (int yy = 0; yy < gy.height; ++yy) {
        const double* grow = g + static_cast<std::size_t>(yy) * gy.width;
        double* orow = out + static_cast<std::size_t>(yy / 2) * gx.width;
        for (int xx = 0; xx < gy.width; ++xx) orow[xx / 2] += grow[xx];
      }
    }
  }
  return gx;
}

struct GlobalAvgPool {
  static Vecs forward(const Grid& x) {
    Vecs y(x.batch, x.channels);
    const double inv = 1.0 / static_cast<double>(x.plane());
    for (int b = 0; b < x.batch; ++b) {
      for (int c = 0; c < x.channels; ++c) {
        const double* in = x.at(b, c);
        double acc = 0.0;
        for (std::size_t i = 0; i < x.plane(); ++i) acc += in[i];
        y.at(b)[c] = acc * inv;
      }
    }
    return y;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// VelocityNet
// ---------------------------------------------------------------------------

struct VelocityNet::Impl {
  NetConfig cfg;
  ParamStore skeleton;
  std::vector<Init> kinds;
  std::vector<int> fan_ins;
  std::vector<int> film_rows;
  int grid_slots = 0, vec_slots = 0;

  // conditioning
  LinearOp tau_l1, tau_l2;
  SiluVec tau_act;
  LinearOp kappa_lin;
  std::vector<LinearOp> ctx_proj;
  int cond_slot = -1;  // fused conditioning vector, shared by all FiLM layers

  // trunk
  std::vector<Conv2d> stems;                // J
  std::vector<std::vector<ResBlock>> enc;   // [level 0-based][block]
  std::vector<Conv2d> down;                 // level l -> l+1, index l-1
  std::vector<Conv2d> fuse;                 // scales 2..J, index j-2
  std::vector<ResBlock> mid;                // 2 blocks
  std::vector<Conv2d> up;                   // level l+1 -> l, index l-1
  std::vector<Conv2d> merge;                // index l-1
  std::vector<std::vector<ResBlock>> dec;   // levels 1..NL-1, index l-1
  std::vector<Head> heads;                  // J

  explicit Impl(const NetConfig& c) : cfg(c) {
    cfg.validate();
    Builder b;
    b.store = &skeleton;

    const int d = cfg.embed_dim;
    tau_l1.build(b, "embed.tau.l1", d, d, true);
    tau_act.build(b);
    tau_l2.build(b, "embed.tau.l2", d, d, true);
    kappa_lin.build(b, "embed.kappa", cfg.kappa_dim, d, false);
    ctx_proj.resize(cfg.context_len);
    for (int l = 0; l < cfg.context_len; ++l)
      ctx_proj[l].build(b, "embed.ctx.slot" + std::to_string(l), cfg.channels, d, false);
    cond_slot = b.vec_slot();

    const int J = cfg.n_scales, NL = cfg.n_levels;
    stems.resize(J);
    for (int j = 1; j <= J; ++j)
      stems[j - 1].build(b, "stem" + std::to_string(j), cfg.stem_channels(), cfg.width(j), 3, 1);
    enc.resize(NL);
    for (int l = 1; l <= NL; ++l) {
      enc[l - 1].resize(cfg.blocks_per_level);
      for (int k = 0; k < cfg.blocks_per_level; ++k)
        enc[l - 1][k].build(b, "enc" + std::to_string(l) + ".block" + std::to_string(k),
                            cfg.width(l), d, cfg.groups);
    }
    down.resize(NL - 1);
    for (int l = 1; l < NL; ++l)
      down[l - 1].build(b, "down" + std::to_string(l), cfg.width(l), cfg.width(l + 1), 3, 2);
    if (J >= 2) fuse.resize(J - 1);
    for (int j = 2; j <= J; ++j)
      fuse[j - 2].build(b, "fuse" + std::to_string(j), 2 * cfg.width(j), cfg.width(j), 1, 1);
    mid.resize(2);
    for (int k = 0; k < 2; ++k)
      mid[k].build(b, "mid.block" + std::to_string(k), cfg.width(NL), d, cfg.groups);
    up.resize(NL - 1);
    merge.resize(NL - 1);
    dec.resize(NL - 1);
    for (int l = NL - 1; l >= 1; --l) {
      up[l - 1].build(b, "up" + std::to_string(l), cfg.width(l + 1), cfg.width(l), 3, 1);
      merge[l - 1].build(b, "merge" + std::to_string(l), 2 * cfg.width(l), cfg.width(l), 1, 1);
      dec[l - 1].resize(cfg.blocks_per_level);
      for (int k = 0; k < cfg.blocks_per_level; ++k)
        dec[l - 1][k].build(b, "dec" + std::to_string(l) + ".block" + std::to_string(k),
                            cfg.width(l), d, cfg.groups);
    }
    heads.resize(J);
    for (int j = 1; j <= J; ++j)
      heads[j - 1].build(b, "head" + std::to_string(j), cfg.width(j), cfg.head_channels(),
                         cfg.groups);

    kinds = std::move(b.kinds);
    fan_ins = std::move(b.fan_ins);
    film_rows = std::move(b.film_rows);
    grid_slots = b.grid_slots;
    vec_slots = b.vec_slots;
  }

  Tape make_tape() const {
    Tape t;
    t.grids.resize(grid_slots);
    t.vecs.resize(vec_slots);
    return t;
  }

  void check_inputs(const std::vector<Grid>& z) const {
    const int J = cfg.n_scales;
    if (static_cast<int>(z.size()) < J)
      throw std::invalid_argument("VelocityNet: expected >= n_scales input grids");
    const int B = z[0].batch;
    const int H1 = z[0].height, W1 = z[0].width;
    const int depth_div = 1 << (cfg.n_levels - 1);
    if (H1 % depth_div != 0 || W1 % depth_div != 0)
      throw std::invalid_argument("VelocityNet: input not divisible across levels");
    for (int j = 1; j <= J; ++j) {
      const Grid& g = z[j - 1];
      if (g.batch != B || g.channels != cfg.stem_channels() || g.height != (H1 >> (j - 1)) ||
          g.width != (W1 >> (j - 1)))
        throw std::invalid_argument("VelocityNet: input grid shape inconsistent at scale " +
                                    std::to_string(j));
    }
  }
};

VelocityNet::VelocityNet(const NetConfig& config) : config_(config), impl_(new Impl(config)) {
  config_ = impl_->cfg;
}
VelocityNet::~VelocityNet() { delete impl_; }

ParamStore VelocityNet::make_params() const { return impl_->skeleton.zeros_like(); }

std::size_t VelocityNet::parameter_count() const { return impl_->skeleton.total_parameters(); }

Tape VelocityNet::make_tape() const { return impl_->make_tape(); }

namespace {
void fill_init(ParamStore& P, const std::vector<Init>& kinds, const std::vector<int>& fan_ins,
               const std::vector<int>& film_rows, std::uint64_t seed, bool dense) {
  PhiloxRng root(seed);
  for (std::size_t i = 0; i < P.entries.size(); ++i) {
    auto& e = P.entries[i];
    PhiloxRng rng = root.split(i);
    const int fan = std::max(1, fan_ins[i]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
    auto draw = [&] { return (2.0 * rng.next_uniform() - 1.0) * bound; };
    switch (kinds[i]) {
      case Init::FanIn:
        for (double& v : e.value) v = draw();
        break;
      case Init::Zero:
        if (dense) {
          // biases/heads get small dense values so every path carries grads
          for (double& v : e.value) v = 0.1 * (2.0 * rng.next_uniform() - 1.0);
        }
        break;
      case Init::FilmProj: {
        // scale rows get fan-in values, shift rows start at zero
        const int rows = film_rows[i];
        const int cols = fan_ins[i];
        for (int r = 0; r < 2 * rows; ++r)
          for (int k = 0; k < cols; ++k)
            e.value[static_cast<std::size_t>(r) * cols + k] =
                (r < rows || dense) ? draw() : 0.0;
        break;
      }
    }
  }
}
}  // namespace

ParamStore VelocityNet::init_params(std::uint64_t seed) const {
  ParamStore P = make_params();
  fill_init(P, impl_->kinds, impl_->fan_ins, impl_->film_rows, seed, false);
  return P;
}

ParamStore VelocityNet::init_params_dense(std::uint64_t seed) const {
  ParamStore P = make_params();
  fill_init(P, impl_->kinds, impl_->fan_ins, impl_->film_rows, seed, true);
  return P;
}

std::vector<double> VelocityNet::sinusoidal_features(double tau, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_features: dim must be even and >= 2");
  const int half = dim / 2;
  std::vector<double> out(dim);
  for (int k = 0; k < half; ++k) {
    const double frac = half == 1 ? 0.0 : static_cast<double>(k) / (half - 1);
    const double omega = std::pow(1e4, frac);  // geometric from 1 to 1e4
    out[2 * k] = std::sin(omega * tau);
    out[2 * k + 1] = std::cos(omega * tau);
  }
  return out;
}

Vecs VelocityNet::embed_condition(const NetInputs& in, const ParamStore& params, Tape& tape) const {
  const Impl& im = *impl_;
  const int B = static_cast<int>(in.tau.size());
  const int d = im.cfg.embed_dim;
  if (in.kappa.batch != B || in.kappa.dim != im.cfg.kappa_dim)
    throw std::invalid_argument("embed_condition: kappa shape mismatch");
  if (static_cast<int>(in.context.size()) != im.cfg.context_len)
    throw std::invalid_argument("embed_condition: wrong context length");

  Vecs feat(B, d);
  for (int b = 0; b < B; ++b) {
    const std::vector<double> f = sinusoidal_features(in.tau[b], d);
    std::copy(f.begin(), f.end(), feat.at(b));
  }
  Vecs h = im.tau_l1.forward(feat, params, tape);
  h = im.tau_act.forward(h, tape);
  Vecs cond = im.tau_l2.forward(h, params, tape);

  const Vecs kap = im.kappa_lin.forward(in.kappa, params, tape);
  for (std::size_t i = 0; i < cond.v.size(); ++i) cond.v[i] += kap.v[i];

  if (im.cfg.context_len > 0) {
    const double inv_l = 1.0 / im.cfg.context_len;
    for (int l = 0; l < im.cfg.context_len; ++l) {
      const Grid& frame = in.context[l];
      if (frame.batch != B || frame.channels != im.cfg.channels)
        throw std::invalid_argument("embed_condition: context frame shape mismatch");
      const Vecs pooled = GlobalAvgPool::forward(frame);
      const Vecs proj = im.ctx_proj[l].forward(pooled, params, tape);
      for (std::size_t i = 0; i < cond.v.size(); ++i) cond.v[i] += inv_l * proj.v[i];
    }
  }
  tape.vecs[im.cond_slot] = cond;
  return cond;
}

void VelocityNet::embed_backward(const Vecs& grad_cond, const ParamStore& params, const Tape& tape,
                                 ParamStore& grads) const {
  const Impl& im = *impl_;
  // context branch
  if (im.cfg.context_len > 0) {
    const double inv_l = 1.0 / im.cfg.context_len;
    Vecs scaled(grad_cond.batch, grad_cond.dim);
    for (std::size_t i = 0; i < scaled.v.size(); ++i) scaled.v[i] = inv_l * grad_cond.v[i];
    for (int l = im.cfg.context_len - 1; l >= 0; --l)
      im.ctx_proj[l].backward(scaled, params, tape, grads);  // grads stop at the pooled values
  }
  // kappa branch
  im.kappa_lin.backward(grad_cond, params, tape, grads);
  // tau branch
  Vecs g = im.tau_l2.backward(grad_cond, params, tape, grads);
  g = im.tau_act.backward(g, tape);
  im.tau_l1.backward(g, params, tape, grads);  // raw sinusoidal features need no grads
}

std::vector<Grid> VelocityNet::forward(const std::vector<Grid>& z, const Vecs& cond,
                                       const ParamStore& params, Tape& tape) const {
  const Impl& im = *impl_;
  im.check_inputs(z);
  const int J = im.cfg.n_scales, NL = im.cfg.n_levels;

  std::vector<Grid> skips(NL);
  Grid f = im.stems[0].forward(z[0], params, tape);
  for (int l = 1; l <= NL; ++l) {
    if (l > 1) {
      f = im.down[l - 2].forward(f, params, tape);
      if (l <= J) {
        const Grid s = im.stems[l - 1].forward(z[l - 1], params, tape);
        f = im.fuse[l - 2].forward(concat_channels(f, s), params, tape);
      }
    }
    for (const ResBlock& blk : im.enc[l - 1]) f = blk.forward(f, cond, params, tape);
    skips[l - 1] = f;
  }
  for (const ResBlock& blk : im.mid) f = blk.forward(f, cond, params, tape);

  std::vector<Grid> out(J);
  if (J == NL) out[J - 1] = im.heads[J - 1].forward(f, params, tape);
  for (int l = NL - 1; l >= 1; --l) {
    Grid g = im.up[l - 1].forward(nearest_up2(f), params, tape);
    f = im.merge[l - 1].forward(concat_channels(g, skips[l - 1]), params, tape);
    for (const ResBlock& blk : im.dec[l - 1]) f = blk.forward(f, cond, params, tape);
    if (l <= J) out[l - 1] = im.heads[l - 1].forward(f, params, tape);
  }
  for (const Grid& u : out)
    for (double v : u.v)
      if (!std::isfinite(v)) throw std::runtime_error("VelocityNet: non-finite activation");
  return out;
}

VelocityNet::BackwardResult VelocityNet::backward(const std::vector<Grid>& grad_out,
                                                  const ParamStore& params, const Tape& tape,
                                                  ParamStore& grads) const {
  const Impl& im = *impl_;
  const int J = im.cfg.n_scales, NL = im.cfg.n_levels;
  if (static_cast<int>(grad_out.size()) != J)
    throw std::invalid_argument("VelocityNet::backward: expected one grad per scale");
  const Vecs& cond = tape.vecs[im.cond_slot];
  const int B = cond.batch;
  Vecs gcond(B, im.cfg.embed_dim);

  // decoder, walked from level 1 (last executed) upward
  std::vector<Grid> skip_grads(NL);  // grads into encoder level outputs from merges
  Grid gf;                           // grad wrt the decoder feature at the current level
  for (int l = 1; l <= NL - 1; ++l) {
    Grid g;
    if (l <= J) g = im.heads[l - 1].backward(grad_out[l - 1], params, tape, grads);
    if (l > 1) {
      // gf holds the grad flowing from level l-1's upsample path
      if (g.v.empty()) g = std::move(gf);
      else
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += gf.v[i];
    }
    for (int k = static_cast<int>(im.dec[l - 1].size()) - 1; k >= 0; --k)
      g = im.dec[l - 1][k].backward(g, cond, params, tape, grads, gcond);
    const Grid gcat = im.merge[l - 1].backward(g, params, tape, grads);
    Grid g_up, g_skip;
    split_channels(gcat, im.cfg.width(l), g_up, g_skip);
    skip_grads[l - 1] = std::move(g_skip);
    gf = nearest_up2_backward(im.up[l - 1].backward(g_up, params, tape, grads));
  }
  // mid input grad
  Grid g = std::move(gf);
  if (J == NL) {
    Grid gh = im.heads[J - 1].backward(grad_out[J - 1], params, tape, grads);
    if (g.v.empty()) g = std::move(gh);
    else
      for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += gh.v[i];
  }
  for (int k = 1; k >= 0; --k) g = im.mid[k].backward(g, cond, params, tape, grads, gcond);

  // encoder, deepest level first
  std::vector<Grid> grad_z(J);
  for (int l = NL; l >= 1; --l) {
    if (l < NL)
      for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += skip_grads[l - 1].v[i];
    for (int k = static_cast<int>(im.enc[l - 1].size()) - 1; k >= 0; --k)
      g = im.enc[l - 1][k].backward(g, cond, params, tape, grads, gcond);
    if (l == 1) {
      grad_z[0] = im.stems[0].backward(g, params, tape, grads);
    } else {
      if (l <= J) {
        const Grid gcat = im.fuse[l - 2].backward(g, params, tape, grads);
        Grid g_main, g_stem;
        split_channels(gcat, im.cfg.width(l), g_main, g_stem);
        grad_z[l - 1] = im.stems[l - 1].backward(g_stem, params, tape, grads);
        g = std::move(g_main);
      }
      g = im.down[l - 2].backward(g, params, tape, grads);
    }
  }
  return {std::move(grad_z), std::move(gcond)};
}

// ---------------------------------------------------------------------------
// Pyramid folding + checkpointing + sampler adapter
// ---------------------------------------------------------------------------

void fold_scale(const WaveletPyramid& p, int j, double* dst) {
  const std::vector<double>& s = p.scales[j - 1];
  std::copy(s.begin(), s.end(), dst);
}

void unfold_scale(const double* src, WaveletPyramid& p, int j) {
  std::vector<double>& s = p.scales[j - 1];
  std::copy(src, src + s.size(), s.begin());
}

namespace {
void write_config(std::ostream& os, const NetConfig& c) {
  os << "n_scales " << c.n_scales << "\n"
     << "n_levels " << c.n_levels << "\n"
     << "init_dim " << c.init_dim << "\n"
     << "blocks_per_level " << c.blocks_per_level << "\n"
     << "embed_dim " << c.embed_dim << "\n"
     << "channel_cap " << c.channel_cap << "\n"
     << "channels " << c.channels << "\n"
     << "context_len " << c.context_len << "\n"
     << "kappa_dim " << c.kappa_dim << "\n"
     << "groups " << c.groups << "\n";
}

NetConfig read_config(std::istream& is) {
  NetConfig c;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "n_scales") ls >> c.n_scales;
    else if (key == "n_levels") ls >> c.n_levels;
    else if (key == "init_dim") ls >> c.init_dim;
    else if (key == "blocks_per_level") ls >> c.blocks_per_level;
    else if (key == "embed_dim") ls >> c.embed_dim;
    else if (key == "channel_cap") ls >> c.channel_cap;
    else if (key == "channels") ls >> c.channels;
    else if (key == "context_len") ls >> c.context_len;
    else if (key == "kappa_dim") ls >> c.kappa_dim;
    else if (key == "groups") ls >> c.groups;
    else if (key == "seed" || key == "step") break;
  }
  return c;
}
}  // namespace

void save_checkpoint(const std::string& dir, const NetConfig& config, const ParamStore& params,
                     std::uint64_t seed, long step, const std::string& wavelet) {
  std::filesystem::create_directories(dir + "/params");
  std::ofstream man(dir + "/checkpoint.txt");
  if (!man) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir);
  write_config(man, config);
  man << "wavelet " << wavelet << "\n";
  man << "seed " << seed << "\n" << "step " << step << "\n";
  for (const ParamStore::Entry& e : params.entries) {
    std::vector<std::uint64_t> shape(e.shape.begin(), e.shape.end());
    write_tensor(dir + "/params/" + e.name + ".wfmt", shape, std::span<const double>(e.value));
  }
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream man(dir + "/checkpoint.txt");
  if (!man) throw std::runtime_error("load_checkpoint: missing manifest in " + dir);
  Checkpoint ck;
  ck.config = read_config(man);
  // rewind for seed/step keys
  man.clear();
  man.seekg(0);
  std::string line;
  while (std::getline(man, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") ls >> ck.seed;
    else if (key == "step") ls >> ck.step;
    else if (key == "wavelet") ls >> ck.wavelet;
  }
  VelocityNet net(ck.config);
  ck.params = net.make_params();
  for (ParamStore::Entry& e : ck.params.entries) {
    TensorFile t = read_tensor(dir + "/params/" + e.name + ".wfmt");
    if (t.dtype != Dtype::F64)
      throw std::runtime_error("load_checkpoint: parameter " + e.name + " must be f64");
    if (t.shape.size() != e.shape.size())
      throw std::runtime_error("load_checkpoint: rank mismatch for " + e.name);
    for (std::size_t i = 0; i < e.shape.size(); ++i)
      if (static_cast<std::uint64_t>(e.shape[i]) != t.shape[i])
        throw std::runtime_error("load_checkpoint: shape mismatch for " + e.name);
    e.value = std::move(t.f64);
  }
  return ck;
}

WaveletPyramid NetVelocityField::velocity(const WaveletPyramid& current,
                                          const WaveletPyramid& state, double tau,
                                          const ParamVector& kappa,
                                          const std::vector<Field>& context) const {
  const NetConfig& cfg = net_.config();
  if (current.levels != cfg.n_scales)
    throw std::invalid_argument("NetVelocityField: pyramid levels != n_scales");
  if (static_cast<int>(kappa.values.size()) != cfg.kappa_dim)
    throw std::invalid_argument("NetVelocityField: kappa length mismatch");
  if (static_cast<int>(context.size()) != cfg.context_len)
    throw std::invalid_argument("NetVelocityField: context length mismatch");

  NetInputs in;
  in.z.reserve(cfg.n_scales);
  for (int j = 1; j <= cfg.n_scales; ++j) {
    Grid z(1, cfg.stem_channels(), current.scale_height(j), current.scale_width(j));
    const std::size_t half = current.scale_size(j);
    fold_scale(current, j, z.v.data());
    fold_scale(state, j, z.v.data() + half);
    in.z.push_back(std::move(z));
  }
  in.tau = {tau};
  in.kappa = Vecs(1, cfg.kappa_dim);
  std::copy(kappa.values.begin(), kappa.values.end(), in.kappa.v.begin());
  for (const Field& f : context) {
    Grid g(1, f.channels, f.height, f.width);
    std::copy(f.data.begin(), f.data.end(), g.v.begin());
    in.context.push_back(std::move(g));
  }

  Tape tape = net_.make_tape();
  const Vecs cond = net_.embed_condition(in, params_, tape);
  const std::vector<Grid> out = net_.forward(in.z, cond, params_, tape);

  WaveletPyramid u = WaveletPyramid::zeros_like_field(state.channels, state.base_height,
                                                      state.base_width, state.levels,
                                                      state.filter_order);
  for (int j = 1; j <= cfg.n_scales; ++j) unfold_scale(out[j - 1].v.data(), u, j);
  return u;
}

}  // namespace wfm
