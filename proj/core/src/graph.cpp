#include "dannet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dannet {

// Reductions and gradient buffers live one precision level up (see
// AccumOf); forward values are rounded back to Real once per op.

template <typename Real>
Tensor<Real> grl_forward(const Tensor<Real>& x) {
  return x;
}

template <typename Real>
Tensor<Real> grl_backward(const Tensor<Real>& upstream, Real lambda) {
  Tensor<Real> out = upstream;
  const Real neg = -lambda;
  for (auto& v : out.data) v *= neg;
  return out;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::input(Tensor<Real> value) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::param(const std::string& name, const Tensor<Real>& value) {
  auto it = param_cache_.find(name);
  if (it != param_cache_.end()) return it->second;
  Node n;
  n.op = "param";
  n.param_name = name;
  n.value = value;
  NodeId id = push(std::move(n));
  param_cache_.emplace(name, id);
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::conv2d(NodeId xid, NodeId wid, NodeId bid, Pad pad) {
  using A = Accum<Real>;
  const Tensor<Real>& x = node(xid).value;
  const Tensor<Real>& w = node(wid).value;
  const Tensor<Real>& b = node(bid).value;
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d expects 4-D input and kernel, got " + shape_str(x.shape) + " and " +
                     shape_str(w.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = w.dim(0), KC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  if (KH != KW || (KH != 1 && KH != 3))
    throw ShapeError("conv2d supports 1x1 or 3x3 kernels, got " + shape_str(w.shape));
  if (C != KC)
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape) + " vs kernel " + shape_str(w.shape));
  if (b.rank() != 1 || b.dim(0) != F)
    throw ShapeError("conv2d bias must be [" + std::to_string(F) + "], got " + shape_str(b.shape));

  const int P = (pad == Pad::kSame && KH == 3) ? 1 : 0;
  const int OH = H + 2 * P - KH + 1;
  const int OW = W + 2 * P - KW + 1;
  if (OH < 1 || OW < 1)
    throw ShapeError("conv2d output collapses for input " + shape_str(x.shape) + " with kernel " +
                     shape_str(w.shape));

  Node n;
  n.op = "conv2d";
  n.inputs = {xid, wid, bid};
  n.value = Tensor<Real>({B, F, OH, OW});

  std::vector<A> acc(static_cast<size_t>(OH) * OW);
  for (int bi = 0; bi < B; ++bi) {
    for (int f = 0; f < F; ++f) {
      std::fill(acc.begin(), acc.end(), static_cast<A>(b[f]));
      for (int c = 0; c < C; ++c) {
        const Real* xp = &x.data[((static_cast<size_t>(bi) * C + c) * H) * W];
        for (int dy = 0; dy < KH; ++dy) {
          for (int dx = 0; dx < KW; ++dx) {
            const A wv = static_cast<A>(w.data[((static_cast<size_t>(f) * C + c) * KH + dy) * KW + dx]);
            const int y0 = std::max(0, P - dy);
            const int y1 = std::min(OH, H + P - dy);
            const int x0 = std::max(0, P - dx);
            const int x1 = std::min(OW, W + P - dx);
            for (int y = y0; y < y1; ++y) {
              const Real* row = xp + static_cast<size_t>(y + dy - P) * W + (x0 + dx - P);
              A* arow = acc.data() + static_cast<size_t>(y) * OW + x0;
              for (int xx = 0; xx < x1 - x0; ++xx) arow[xx] += wv * static_cast<A>(row[xx]);
            }
          }
        }
      }
      Real* out = &n.value.data[((static_cast<size_t>(bi) * F + f) * OH) * OW];
      for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<Real>(acc[i]);
    }
  }

  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid, wid, bid, B, C, H, W, F, KH, KW, P, OH, OW]() {
    const Tensor<Real>& x = node(xid).value;
    const Tensor<Real>& w = node(wid).value;
    const Tensor<A>& dy = node(id).grad;
    Tensor<A>& dx = node(xid).grad;
    Tensor<A>& dw = node(wid).grad;
    Tensor<A>& db = node(bid).grad;

    // Bias gradient.
    for (int f = 0; f < F; ++f) {
      A s = 0;
      for (int bi = 0; bi < B; ++bi) {
        const A* g = &dy.data[((static_cast<size_t>(bi) * F + f) * OH) * OW];
        for (int i = 0; i < OH * OW; ++i) s += g[i];
      }
      db[f] += s;
    }

    // Kernel gradient.
    for (int f = 0; f < F; ++f) {
      for (int c = 0; c < C; ++c) {
        for (int dyk = 0; dyk < KH; ++dyk) {
          for (int dxk = 0; dxk < KW; ++dxk) {
            A s = 0;
            for (int bi = 0; bi < B; ++bi) {
              const Real* xp = &x.data[((static_cast<size_t>(bi) * C + c) * H) * W];
              const A* gp = &dy.data[((static_cast<size_t>(bi) * F + f) * OH) * OW];
              const int y0 = std::max(0, P - dyk);
              const int y1 = std::min(OH, H + P - dyk);
              const int x0 = std::max(0, P - dxk);
              const int x1 = std::min(OW, W + P - dxk);
              for (int y = y0; y < y1; ++y) {
                const Real* xrow = xp + static_cast<size_t>(y + dyk - P) * W + (x0 + dxk - P);
                const A* grow = gp + static_cast<size_t>(y) * OW + x0;
                for (int xx = 0; xx < x1 - x0; ++xx) s += static_cast<A>(xrow[xx]) * grow[xx];
              }
            }
            dw.data[((static_cast<size_t>(f) * C + c) * KH + dyk) * KW + dxk] += s;
          }
        }
      }
    }
    if (corrupt_conv_backward && dw.numel() > 0) dw[0] *= static_cast<A>(1.001);

    // Input gradient.
    std::vector<A> plane(static_cast<size_t>(H) * W);
    for (int bi = 0; bi < B; ++bi) {
      for (int c = 0; c < C; ++c) {
        std::fill(plane.begin(), plane.end(), A(0));
        for (int f = 0; f < F; ++f) {
          const A* gp = &dy.data[((static_cast<size_t>(bi) * F + f) * OH) * OW];
          for (int dyk = 0; dyk < KH; ++dyk) {
            for (int dxk = 0; dxk < KW; ++dxk) {
              const A wv = static_cast<A>(w.data[((static_cast<size_t>(f) * C + c) * KH + dyk) * KW + dxk]);
              const int y0 = std::max(0, P - dyk);
              const int y1 = std::min(OH, H + P - dyk);
              const int x0 = std::max(0, P - dxk);
              const int x1 = std::min(OW, W + P - dxk);
              for (int y = y0; y < y1; ++y) {
                A* prow = plane.data() + static_cast<size_t>(y + dyk - P) * W + (x0 + dxk - P);
                const A* grow = gp + static_cast<size_t>(y) * OW + x0;
                for (int xx = 0; xx < x1 - x0; ++xx) prow[xx] += wv * grow[xx];
              }
            }
          }
        }
        A* dxp = &dx.data[((static_cast<size_t>(bi) * C + c) * H) * W];
        for (size_t i = 0; i < plane.size(); ++i) dxp[i] += plane[i];
      }
    }
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::batch_norm(NodeId xid, NodeId gid, NodeId bid, Mode mode,
                                                     RunningStats<Real> stats) {
  using A = Accum<Real>;
  const Tensor<Real>& x = node(xid).value;
  const Tensor<Real>& gamma = node(gid).value;
  const Tensor<Real>& beta = node(bid).value;
  if (x.rank() != 4) throw ShapeError("batch_norm expects 4-D input, got " + shape_str(x.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
    throw ShapeError("batch_norm gamma/beta must be [" + std::to_string(C) + "]");
  const int64_t N = static_cast<int64_t>(B) * H * W;
  if (mode == Mode::kTrain && N < 2)
    throw DataError("batch_norm: degenerate batch, B*H*W = " + std::to_string(N) + " < 2 in train mode");
  if (mode == Mode::kEval && (stats.mean == nullptr || stats.var == nullptr))
    throw ConfigError("batch_norm: eval mode requires running statistics");

  std::vector<A> mean(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
  if (mode == Mode::kTrain) {
    for (int c = 0; c < C; ++c) {
      A s = 0;
      for (int bi = 0; bi < B; ++bi) {
        const Real* p = &x.data[((static_cast<size_t>(bi) * C + c) * H) * W];
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) s += static_cast<A>(p[i]);
      }
      const A m = s / static_cast<A>(N);
      A v = 0;
      for (int bi = 0; bi < B; ++bi) {
        const Real* p = &x.data[((static_cast<size_t>(bi) * C + c) * H) * W];
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
          const A d = static_cast<A>(p[i]) - m;
          v += d * d;
        }
      }
      v /= static_cast<A>(N);
      mean[static_cast<size_t>(c)] = m;
      inv_std[static_cast<size_t>(c)] = A(1) / std::sqrt(v + static_cast<A>(kBatchNormEps));
      if (stats.mean != nullptr && stats.var != nullptr) {
        (*stats.mean)[c] = static_cast<Real>(static_cast<A>(kBatchNormMomentum) * static_cast<A>((*stats.mean)[c]) +
                                             (A(1) - static_cast<A>(kBatchNormMomentum)) * m);
        (*stats.var)[c] = static_cast<Real>(static_cast<A>(kBatchNormMomentum) * static_cast<A>((*stats.var)[c]) +
                                            (A(1) - static_cast<A>(kBatchNormMomentum)) * v);
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = static_cast<A>((*stats.mean)[c]);
      inv_std[static_cast<size_t>(c)] =
          A(1) / std::sqrt(static_cast<A>((*stats.var)[c]) + static_cast<A>(kBatchNormEps));
    }
  }

  Node n;
  n.op = "batch_norm";
  n.inputs = {xid, gid, bid};
  n.value = Tensor<Real>({B, C, H, W});
  for (int bi = 0; bi < B; ++bi) {
    for (int c = 0; c < C; ++c) {
      const Real* p = &x.data[((static_cast<size_t>(bi) * C + c) * H) * W];
      Real* o = &n.value.data[((static_cast<size_t>(bi) * C + c) * H) * W];
      const A m = mean[static_cast<size_t>(c)];
      const A is = inv_std[static_cast<size_t>(c)];
      const A g = static_cast<A>(gamma[c]);
      const A bt = static_cast<A>(beta[c]);
      for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
        o[i] = static_cast<Real>(g * ((static_cast<A>(p[i]) - m) * is) + bt);
    }
  }

  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid, gid, bid, B, C, H, W, N, mode, mean, inv_std]() {
    const Tensor<Real>& x = node(xid).value;
    const Tensor<Real>& gamma = node(gid).value;
    const Tensor<A>& dy = node(id).grad;
    Tensor<A>& dx = node(xid).grad;
    Tensor<A>& dg = node(gid).grad;
    Tensor<A>& db = node(bid).grad;

    for (int c = 0; c < C; ++c) {
      const A m = mean[static_cast<size_t>(c)];
      const A is = inv_std[static_cast<size_t>(c)];
      const A g = static_cast<A>(gamma[c]);
      A sum_dy = 0, sum_dy_xhat = 0;
      for (int bi = 0; bi < B; ++bi) {
        const Real* xp = &x.data[((static_cast<size_t>(bi) * C + c) * H) * W];
        const A* gp = &dy.data[((static_cast<size_t>(bi) * C + c) * H) * W];
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
          const A xhat = (static_cast<A>(xp[i]) - m) * is;
          sum_dy += gp[i];
          sum_dy_xhat += gp[i] * xhat;
        }
      }
      dg[c] += sum_dy_xhat;
      db[c] += sum_dy;

      if (mode == Mode::kTrain) {
        const A k1 = sum_dy / static_cast<A>(N);
        const A k2 = sum_dy_xhat / static_cast<A>(N);
        for (int bi = 0; bi < B; ++bi) {
          const Real* xp = &x.data[((static_cast<size_t>(bi) * C + c) * H) * W];
          const A* gp = &dy.data[((static_cast<size_t>(bi) * C + c) * H) * W];
          A* dxp = &dx.data[((static_cast<size_t>(bi) * C + c) * H) * W];
          for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
            const A xhat = (static_cast<A>(xp[i]) - m) * is;
            dxp[i] += g * is * (gp[i] - k1 - xhat * k2);
          }
        }
      } else {
        for (int bi = 0; bi < B; ++bi) {
          const A* gp = &dy.data[((static_cast<size_t>(bi) * C + c) * H) * W];
          A* dxp = &dx.data[((static_cast<size_t>(bi) * C + c) * H) * W];
          for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) dxp[i] += g * is * gp[i];
        }
      }
    }
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::relu(NodeId xid) {
  const Tensor<Real>& x = node(xid).value;
  Node n;
  n.op = "relu";
  n.inputs = {xid};
  n.value = Tensor<Real>(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) n.value.data[i] = x.data[i] > Real(0) ? x.data[i] : Real(0);
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid]() {
    const Tensor<Real>& x = node(xid).value;
    const auto& dy = node(id).grad;
    auto& dx = node(xid).grad;
    for (size_t i = 0; i < x.data.size(); ++i)
      if (x.data[i] > Real(0)) dx.data[i] += dy.data[i];
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::avg_pool_2x2(NodeId xid) {
  using A = Accum<Real>;
  const Tensor<Real>& x = node(xid).value;
  if (x.rank() != 4) throw ShapeError("avg_pool_2x2 expects 4-D input, got " + shape_str(x.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = (H + 1) / 2, OW = (W + 1) / 2;
  Node n;
  n.op = "avg_pool_2x2";
  n.inputs = {xid};
  n.value = Tensor<Real>({B, C, OH, OW});
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          const int y1 = std::min(2 * oy + 2, H), x1 = std::min(2 * ox + 2, W);
          A s = 0;
          int cnt = 0;
          for (int y = 2 * oy; y < y1; ++y)
            for (int xx = 2 * ox; xx < x1; ++xx) {
              s += static_cast<A>(x.at4(bi, c, y, xx));
              ++cnt;
            }
          n.value.at4(bi, c, oy, ox) = static_cast<Real>(s / cnt);
        }
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid, B, C, H, W, OH, OW]() {
    const auto& dy = node(id).grad;
    auto& dx = node(xid).grad;
    for (int bi = 0; bi < B; ++bi)
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            const int y1 = std::min(2 * oy + 2, H), x1 = std::min(2 * ox + 2, W);
            const int cnt = (y1 - 2 * oy) * (x1 - 2 * ox);
            const A share = dy.at4(bi, c, oy, ox) / cnt;
            for (int y = 2 * oy; y < y1; ++y)
              for (int xx = 2 * ox; xx < x1; ++xx) dx.at4(bi, c, y, xx) += share;
          }
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::concat_channels(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels needs at least one input");
  const Tensor<Real>& first = node(xs[0]).value;
  if (first.rank() != 4) throw ShapeError("concat_channels expects 4-D inputs, got " + shape_str(first.shape));
  const int B = first.dim(0), H = first.dim(2), W = first.dim(3);
  int total_c = 0;
  for (NodeId xid : xs) {
    const Tensor<Real>& t = node(xid).value;
    if (t.rank() != 4 || t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
      throw ShapeError("concat_channels mismatch: " + shape_str(first.shape) + " vs " + shape_str(t.shape));
    total_c += t.dim(1);
  }
  Node n;
  n.op = "concat_channels";
  n.inputs = xs;
  n.value = Tensor<Real>({B, total_c, H, W});
  const size_t plane = static_cast<size_t>(H) * W;
  for (int bi = 0; bi < B; ++bi) {
    int c_off = 0;
    for (NodeId xid : xs) {
      const Tensor<Real>& t = node(xid).value;
      const int c_in = t.dim(1);
      std::copy_n(&t.data[static_cast<size_t>(bi) * c_in * plane], static_cast<size_t>(c_in) * plane,
                  &n.value.data[(static_cast<size_t>(bi) * total_c + c_off) * plane]);
      c_off += c_in;
    }
  }
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xs, B, total_c, plane]() {
    const auto& dy = node(id).grad;
    for (int bi = 0; bi < B; ++bi) {
      int c_off = 0;
      for (NodeId xid : xs) {
        auto& dx = node(xid).grad;
        const int c_in = dx.dim(1);
        const auto* src = &dy.data[(static_cast<size_t>(bi) * total_c + c_off) * plane];
        auto* dst = &dx.data[static_cast<size_t>(bi) * c_in * plane];
        for (size_t i = 0; i < static_cast<size_t>(c_in) * plane; ++i) dst[i] += src[i];
        c_off += c_in;
      }
    }
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::affine(NodeId xid, NodeId wid, NodeId bid) {
  using A = Accum<Real>;
  const Tensor<Real>& x = node(xid).value;
  const Tensor<Real>& w = node(wid).value;
  const Tensor<Real>& b = node(bid).value;
  if (x.rank() != 2 || w.rank() != 2)
    throw ShapeError("affine expects 2-D input and weight, got " + shape_str(x.shape) + " and " + shape_str(w.shape));
  const int B = x.dim(0), D = x.dim(1), K = w.dim(1);
  if (w.dim(0) != D)
    throw ShapeError("affine inner dimension mismatch: input " + shape_str(x.shape) + " vs weight " +
                     shape_str(w.shape));
  if (b.rank() != 1 || b.dim(0) != K)
    throw ShapeError("affine bias must be [" + std::to_string(K) + "], got " + shape_str(b.shape));
  Node n;
  n.op = "affine";
  n.inputs = {xid, wid, bid};
  n.value = Tensor<Real>({B, K});
  for (int r = 0; r < B; ++r)
    for (int k = 0; k < K; ++k) {
      A s = static_cast<A>(b[k]);
      for (int d = 0; d < D; ++d) s += static_cast<A>(x.at2(r, d)) * static_cast<A>(w.at2(d, k));
      n.value.at2(r, k) = static_cast<Real>(s);
    }
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid, wid, bid, B, D, K]() {
    const Tensor<Real>& x = node(xid).value;
    const Tensor<Real>& w = node(wid).value;
    const Tensor<A>& dy = node(id).grad;
    Tensor<A>& dx = node(xid).grad;
    Tensor<A>& dw = node(wid).grad;
    Tensor<A>& db = node(bid).grad;
    for (int r = 0; r < B; ++r)
      for (int d = 0; d < D; ++d) {
        A s = 0;
        for (int k = 0; k < K; ++k) s += dy.at2(r, k) * static_cast<A>(w.at2(d, k));
        dx.at2(r, d) += s;
      }
    for (int d = 0; d < D; ++d)
      for (int k = 0; k < K; ++k) {
        A s = 0;
        for (int r = 0; r < B; ++r) s += static_cast<A>(x.at2(r, d)) * dy.at2(r, k);
        dw.at2(d, k) += s;
      }
    for (int k = 0; k < K; ++k) {
      A s = 0;
      for (int r = 0; r < B; ++r) s += dy.at2(r, k);
      db[k] += s;
    }
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::global_avg_pool(NodeId xid) {
  using A = Accum<Real>;
  const Tensor<Real>& x = node(xid).value;
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects 4-D input, got " + shape_str(x.shape));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  Node n;
  n.op = "global_avg_pool";
  n.inputs = {xid};
  n.value = Tensor<Real>({B, C});
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const Real* p = &x.data[((static_cast<size_t>(bi) * C + c) * H) * W];
      A s = 0;
      for (int64_t i = 0; i < plane; ++i) s += static_cast<A>(p[i]);
      n.value.at2(bi, c) = static_cast<Real>(s / static_cast<A>(plane));
    }
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid, B, C, H, W, plane]() {
    const auto& dy = node(id).grad;
    auto& dx = node(xid).grad;
    for (int bi = 0; bi < B; ++bi)
      for (int c = 0; c < C; ++c) {
        const A share = dy.at2(bi, c) / static_cast<A>(plane);
        A* p = &dx.data[((static_cast<size_t>(bi) * C + c) * H) * W];
        for (int64_t i = 0; i < plane; ++i) p[i] += share;
      }
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::flatten(NodeId xid) {
  const Tensor<Real>& x = node(xid).value;
  if (x.rank() < 2) throw ShapeError("flatten expects rank >= 2, got " + shape_str(x.shape));
  const int B = x.dim(0);
  const int rest = static_cast<int>(x.numel() / B);
  Node n;
  n.op = "flatten";
  n.inputs = {xid};
  n.value = Tensor<Real>({B, rest}, x.data);
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid]() {
    const auto& dy = node(id).grad;
    auto& dx = node(xid).grad;
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy.data[i];
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::add(NodeId aid, NodeId bid) {
  const Tensor<Real>& a = node(aid).value;
  const Tensor<Real>& b = node(bid).value;
  if (!a.same_shape(b))
    throw ShapeError("add shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Node n;
  n.op = "add";
  n.inputs = {aid, bid};
  n.value = Tensor<Real>(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] + b.data[i];
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, aid, bid]() {
    const auto& dy = node(id).grad;
    auto& da = node(aid).grad;
    auto& db = node(bid).grad;
    for (size_t i = 0; i < dy.data.size(); ++i) {
      da.data[i] += dy.data[i];
      db.data[i] += dy.data[i];
    }
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::sum(NodeId xid) {
  using A = Accum<Real>;
  const Tensor<Real>& x = node(xid).value;
  Node n;
  n.op = "sum";
  n.inputs = {xid};
  A s = 0;
  for (Real v : x.data) s += static_cast<A>(v);
  n.value = Tensor<Real>({1}, {static_cast<Real>(s)});
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid]() {
    const A g = node(id).grad[0];
    auto& dx = node(xid).grad;
    for (auto& v : dx.data) v += g;
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::grl(NodeId xid, Real lambda) {
  using A = Accum<Real>;
  const Tensor<Real>& x = node(xid).value;
  Node n;
  n.op = "grl";
  n.inputs = {xid};
  n.value = x;
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, xid, lambda]() {
    const auto& dy = node(id).grad;
    auto& dx = node(xid).grad;
    const A neg = -static_cast<A>(lambda);
    for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += neg * dy.data[i];
  };
  return id;
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::softmax_cross_entropy(NodeId lid, const std::vector<int>& targets) {
  using A = Accum<Real>;
  const Tensor<Real>& logits = node(lid).value;
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy expects 2-D logits, got " + shape_str(logits.shape));
  const int B = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(targets.size()) != B)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                     std::to_string(B));
  for (int r = 0; r < B; ++r)
    if (targets[static_cast<size_t>(r)] < 0 || targets[static_cast<size_t>(r)] >= K)
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(targets[static_cast<size_t>(r)]) +
                              " out of range [0," + std::to_string(K) + ") at row " + std::to_string(r));

  Tensor<Real> probs({B, K});
  A loss = 0;
  for (int r = 0; r < B; ++r) {
    Real m = logits.at2(r, 0);
    for (int k = 1; k < K; ++k) m = std::max(m, logits.at2(r, k));
    A z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(static_cast<A>(logits.at2(r, k)) - static_cast<A>(m));
    const A log_z = std::log(z) + static_cast<A>(m);
    for (int k = 0; k < K; ++k)
      probs.at2(r, k) = static_cast<Real>(std::exp(static_cast<A>(logits.at2(r, k)) - log_z));
    loss += log_z - static_cast<A>(logits.at2(r, targets[static_cast<size_t>(r)]));
  }

  Node n;
  n.op = "softmax_cross_entropy";
  n.inputs = {lid};
  n.value = Tensor<Real>({1}, {static_cast<Real>(loss)});
  NodeId id = push(std::move(n));
  nodes_[static_cast<size_t>(id)].backward_fn = [this, id, lid, targets, probs, B, K]() {
    const A g = node(id).grad[0];
    auto& dl = node(lid).grad;
    for (int r = 0; r < B; ++r)
      for (int k = 0; k < K; ++k) {
        const A onehot = (k == targets[static_cast<size_t>(r)]) ? A(1) : A(0);
        dl.at2(r, k) += g * (static_cast<A>(probs.at2(r, k)) - onehot);
      }
  };
  return id;
}

template <typename Real>
void Graph<Real>::backward(NodeId loss) {
  Node& ln = node(loss);
  if (ln.value.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got " + shape_str(ln.value.shape));
  for (auto& n : nodes_) {
    n.grad = Tensor<Accum<Real>>(n.value.shape);
  }
  ln.grad[0] = Accum<Real>(1);
  for (size_t i = nodes_.size(); i > 0; --i) {
    auto& n = nodes_[i - 1];
    if (n.backward_fn) n.backward_fn();
  }
}

template <typename Real>
void Graph<Real>::accumulate_param_grads(ParameterSet<Real>& params) const {
  for (const auto& [name, id] : param_cache_) {
    if (!params.contains(name)) continue;  // leaf owned by another set
    const Node& n = node(id);
    if (n.grad.data.empty()) continue;  // backward never ran
    Param<Real>& p = params.at(name);
    for (size_t i = 0; i < p.grad.data.size(); ++i) p.grad.data[i] += n.grad.data[i];
  }
}

template class Graph<float>;
template class Graph<double>;
template Tensor<float> grl_forward<float>(const Tensor<float>&);
template Tensor<double> grl_forward<double>(const Tensor<double>&);
template Tensor<float> grl_backward<float>(const Tensor<float>&, float);
template Tensor<double> grl_backward<double>(const Tensor<double>&, double);

}  // namespace dannet
