#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "voxgan/conv_kernels.hpp"
#include "voxgan/errors.hpp"

// Reverse-mode automatic differentiation over dense N-d arrays. Operations
// execute eagerly and append nodes to a Graph tape; backward sweeps the tape
// in reverse append order. Backward rules are themselves expressed as tape
// operations, so gradients returned with create_graph=true can be
// differentiated again (needed for penalties on gradient norms).
//
// Instantiate with T = float for training or T = double for verification.

namespace voxgan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <typename T>
class Graph;

// Lightweight handle into one Graph; copying aliases the node.
template <typename T>
class Tensor {
  public:
    Tensor() = default;
    Tensor(Graph<T>* graph, int id) : graph_(graph), id_(id) {}

    bool valid() const { return graph_ != nullptr && id_ >= 0; }
    Graph<T>* graph() const { return graph_; }
    int id() const { return id_; }

    const Shape& shape() const;
    std::size_t numel() const;
    const std::vector<T>& values() const;
    std::vector<T>& mutable_values();  // leaves only; used by optimizers
    bool requires_grad() const;
    // Accumulated gradient of a leaf; nullptr before any backward().
    const std::vector<T>* grad() const;
    T scalar() const;

  private:
    Graph<T>* graph_ = nullptr;
    int id_ = -1;
};

enum class ConvBackend { gemm, direct };

template <typename T>
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    ConvBackend conv_backend = ConvBackend::gemm;

    // ---- leaves -------------------------------------------------------

    Tensor<T> leaf(Shape shape, std::vector<T> values, bool requires_grad = false) {
        validate_shape_(shape);
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("leaf: shape " + shape_str(shape) + " expects " +
                                        std::to_string(shape_numel(shape)) +
                                        " values, got " + std::to_string(values.size()));
        const int id = push_(std::move(shape), std::move(values));
        nodes_[id].is_leaf = true;
        nodes_[id].requires_grad = requires_grad;
        return {this, id};
    }

    Tensor<T> constant(Shape shape, std::vector<T> values) {
        return leaf(std::move(shape), std::move(values), false);
    }

    Tensor<T> full(Shape shape, T value) {
        const std::size_t n = shape_numel(shape);
        return constant(std::move(shape), std::vector<T>(n, value));
    }

    Tensor<T> scalar_const(T value) { return constant({1}, {value}); }

    // Value copy detached from the differentiable history.
    Tensor<T> detach(Tensor<T> x) {
        return constant(node_(x).shape, node_(x).values);
    }

    // ---- elementwise, equal shapes -------------------------------------

    Tensor<T> add(Tensor<T> a, Tensor<T> b) {
        return binary_(a, b, "add", [](T x, T y) { return x + y; },
                       [](Graph& g, Tensor<T> adj, Tensor<T>, Tensor<T>) {
                           return std::pair{adj, adj};
                       });
    }

    Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
        return binary_(a, b, "sub", [](T x, T y) { return x - y; },
                       [](Graph& g, Tensor<T> adj, Tensor<T>, Tensor<T>) {
                           return std::pair{adj, g.neg(adj)};
                       });
    }

    Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
        return binary_(a, b, "mul", [](T x, T y) { return x * y; },
                       [](Graph& g, Tensor<T> adj, Tensor<T> x, Tensor<T> y) {
                           return std::pair{g.mul(adj, y), g.mul(adj, x)};
                       });
    }

    Tensor<T> div(Tensor<T> a, Tensor<T> b) {
        return binary_(a, b, "div", [](T x, T y) { return x / y; },
                       [](Graph& g, Tensor<T> adj, Tensor<T> x, Tensor<T> y) {
                           Tensor<T> ga = g.div(adj, y);
                           Tensor<T> gb = g.neg(g.mul(ga, g.div(x, y)));
                           return std::pair{ga, gb};
                       });
    }

    // a*x + b with scalar constants.
    Tensor<T> affine_scale(Tensor<T> x, T a, T b) {
        return unary_(x, [a, b](T v) { return a * v + b; },
                      [a](Graph& g, Tensor<T> adj, Tensor<T>, Tensor<T>) {
                          return g.affine_scale(adj, a, T(0));
                      });
    }

    Tensor<T> neg(Tensor<T> x) { return affine_scale(x, T(-1), T(0)); }

    Tensor<T> relu(Tensor<T> x) { return leaky_relu(x, T(0)); }
    Tensor<T> max_with_zero(Tensor<T> x) { return leaky_relu(x, T(0)); }

    Tensor<T> leaky_relu(Tensor<T> x, T slope) {
        return unary_(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                      [slope](Graph& g, Tensor<T> adj, Tensor<T> in, Tensor<T>) {
                          return g.pick_pos(in, adj, slope);
                      });
    }

    Tensor<T> sigmoid(Tensor<T> x) {
        return unary_(x,
                      [](T v) {
                          if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
                          const T e = std::exp(v);
                          return e / (T(1) + e);
                      },
                      [](Graph& g, Tensor<T> adj, Tensor<T>, Tensor<T> out) {
                          return g.mul(g.mul(adj, out), g.affine_scale(out, T(-1), T(1)));
                      });
    }

    Tensor<T> tanh(Tensor<T> x) {
        return unary_(x, [](T v) { return std::tanh(v); },
                      [](Graph& g, Tensor<T> adj, Tensor<T>, Tensor<T> out) {
                          return g.mul(adj, g.affine_scale(g.square(out), T(-1), T(1)));
                      });
    }

    Tensor<T> log(Tensor<T> x) {
        const auto& v = node_(x).values;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (!(v[i] > T(0)))
                throw std::domain_error("log: non-positive value " + std::to_string(v[i]) +
                                        " at flat index " + std::to_string(i));
        return unary_(x, [](T w) { return std::log(w); },
                      [](Graph& g, Tensor<T> adj, Tensor<T> in, Tensor<T>) {
                          return g.div(adj, in);
                      });
    }

    Tensor<T> square(Tensor<T> x) {
        return unary_(x, [](T v) { return v * v; },
                      [](Graph& g, Tensor<T> adj, Tensor<T> in, Tensor<T>) {
                          return g.affine_scale(g.mul(adj, in), T(2), T(0));
                      });
    }

    Tensor<T> sqrt(Tensor<T> x) {
        const auto& v = node_(x).values;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] < T(0))
                throw std::domain_error("sqrt: negative value " + std::to_string(v[i]) +
                                        " at flat index " + std::to_string(i));
        return unary_(x, [](T w) { return std::sqrt(w); },
                      [](Graph& g, Tensor<T> adj, Tensor<T>, Tensor<T> out) {
                          return g.div(adj, g.affine_scale(out, T(2), T(0)));
                      });
    }

    // x > 0 ? a : slope*a. Gradient routing mask for relu-family backward;
    // treated as constant in x.
    Tensor<T> pick_pos(Tensor<T> x, Tensor<T> a, T slope) {
        check_same_shape_(x, a, "pick_pos");
        const auto& xv = node_(x).values;
        const auto& av = node_(a).values;
        std::vector<T> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = xv[i] > T(0) ? av[i] : slope * av[i];
        const int id = push_(node_(x).shape, std::move(out));
        const int xid = x.id(), aid = a.id();
        if (node_raw_(aid).requires_grad) {
            set_grad_fn_(id, [xid, aid, slope](Graph& g, int adj,
                                               std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> ga = g.pick_pos({&g, xid}, {&g, adj}, slope);
                out_g.emplace_back(aid, ga.id());
            });
        }
        return {this, id};
    }

    // lo < x < hi ? a : 0. Gradient routing mask for clamp backward.
    Tensor<T> pick_in_range(Tensor<T> x, T lo, T hi, Tensor<T> a) {
        check_same_shape_(x, a, "pick_in_range");
        const auto& xv = node_(x).values;
        const auto& av = node_(a).values;
        std::vector<T> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = (xv[i] > lo && xv[i] < hi) ? av[i] : T(0);
        const int id = push_(node_(x).shape, std::move(out));
        const int xid = x.id(), aid = a.id();
        if (node_raw_(aid).requires_grad) {
            set_grad_fn_(id, [xid, aid, lo, hi](Graph& g, int adj,
                                                std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> ga = g.pick_in_range({&g, xid}, lo, hi, {&g, adj});
                out_g.emplace_back(aid, ga.id());
            });
        }
        return {this, id};
    }

    Tensor<T> clamp(Tensor<T> x, T lo, T hi) {
        return unary_(x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
                      [lo, hi](Graph& g, Tensor<T> adj, Tensor<T> in, Tensor<T>) {
                          return g.pick_in_range(in, lo, hi, adj);
                      });
    }

    Tensor<T> clamp_min(Tensor<T> x, T lo) {
        return unary_(x, [lo](T v) { return v < lo ? lo : v; },
                      [lo](Graph& g, Tensor<T> adj, Tensor<T> in, Tensor<T>) {
                          // derivative 0 at and below the floor
                          return g.pick_pos(g.affine_scale(in, T(1), -lo), adj, T(0));
                      });
    }

    // ---- reductions and broadcasts -------------------------------------

    Tensor<T> sum(Tensor<T> x) {
        check_nonempty_(x, "sum");
        T acc = T(0);
        for (T v : node_(x).values) acc += v;
        const int id = push_({1}, {acc});
        const int xid = x.id();
        if (node_raw_(xid).requires_grad) {
            Shape xshape = node_raw_(xid).shape;
            set_grad_fn_(id, [xid, xshape](Graph& g, int adj,
                                           std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> gx = g.scalar_broadcast({&g, adj}, xshape);
                out_g.emplace_back(xid, gx.id());
            });
        }
        return {this, id};
    }

    Tensor<T> mean(Tensor<T> x) {
        check_nonempty_(x, "mean");
        const T inv = T(1) / static_cast<T>(node_(x).values.size());
        return affine_scale(sum(x), inv, T(0));
    }

    Tensor<T> scalar_broadcast(Tensor<T> s, Shape like) {
        if (node_(s).values.size() != 1)
            throw std::invalid_argument("scalar_broadcast: source must be scalar");
        validate_shape_(like);
        std::vector<T> out(shape_numel(like), node_(s).values[0]);
        const int id = push_(like, std::move(out));
        const int sid = s.id();
        if (node_raw_(sid).requires_grad) {
            set_grad_fn_(id, [sid](Graph& g, int adj,
                                   std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> gs = g.sum({&g, adj});
                out_g.emplace_back(sid, gs.id());
            });
        }
        return {this, id};
    }

    // [N, ...] -> [N]; sum over all trailing dims.
    Tensor<T> sample_sum(Tensor<T> x) {
        check_nonempty_(x, "sample_sum");
        const Shape s = node_(x).shape;
        const std::size_t n = s[0];
        const std::size_t inner = shape_numel(s) / n;
        const auto& v = node_(x).values;
        std::vector<T> out(n, T(0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < inner; ++j) out[i] += v[i * inner + j];
        const int id = push_({n}, std::move(out));
        const int xid = x.id();
        if (node_raw_(xid).requires_grad) {
            Shape xshape = s;
            set_grad_fn_(id, [xid, xshape](Graph& g, int adj,
                                           std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> gx = g.sample_broadcast({&g, adj}, xshape);
                out_g.emplace_back(xid, gx.id());
            });
        }
        return {this, id};
    }

    // [N] -> like, replicating across trailing dims; like[0] must equal N.
    Tensor<T> sample_broadcast(Tensor<T> v, Shape like) {
        validate_shape_(like);
        const Shape& s = node_(v).shape;
        if (s.size() != 1 || s[0] != like[0])
            throw dimension_error("sample_broadcast: source " + shape_str(s) +
                                  " vs target " + shape_str(like));
        const std::size_t n = like[0];
        const std::size_t inner = shape_numel(like) / n;
        const auto& src = node_(v).values;
        std::vector<T> out(n * inner);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < inner; ++j) out[i * inner + j] = src[i];
        const int id = push_(like, std::move(out));
        const int vid = v.id();
        if (node_raw_(vid).requires_grad) {
            set_grad_fn_(id, [vid](Graph& g, int adj,
                                   std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> gv = g.sample_sum({&g, adj});
                out_g.emplace_back(vid, gv.id());
            });
        }
        return {this, id};
    }

    // [N, C, ...] -> [C]; sum over batch and trailing dims.
    Tensor<T> channel_sum(Tensor<T> x) {
        check_mine_(x, "channel_sum");
        const Shape s = node_(x).shape;
        if (s.size() < 2) throw dimension_error("channel_sum: rank must be >= 2");
        const std::size_t n = s[0], c = s[1];
        const std::size_t inner = shape_numel(s) / (n * c);
        const auto& v = node_(x).values;
        std::vector<T> out(c, T(0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const T* p = v.data() + (i * c + ch) * inner;
                T acc = T(0);
                for (std::size_t j = 0; j < inner; ++j) acc += p[j];
                out[ch] += acc;
            }
        const int id = push_({c}, std::move(out));
        const int xid = x.id();
        if (node_raw_(xid).requires_grad) {
            Shape xshape = s;
            set_grad_fn_(id, [xid, xshape](Graph& g, int adj,
                                           std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> gx = g.channel_broadcast({&g, adj}, xshape);
                out_g.emplace_back(xid, gx.id());
            });
        }
        return {this, id};
    }

    // [C] -> like with like[1] == C.
    Tensor<T> channel_broadcast(Tensor<T> v, Shape like) {
        validate_shape_(like);
        const Shape& s = node_(v).shape;
        if (like.size() < 2 || s.size() != 1 || s[0] != like[1])
            throw dimension_error("channel_broadcast: source " + shape_str(s) +
                                  " vs target " + shape_str(like));
        const std::size_t n = like[0], c = like[1];
        const std::size_t inner = shape_numel(like) / (n * c);
        const auto& src = node_(v).values;
        std::vector<T> out(n * c * inner);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
                T* p = out.data() + (i * c + ch) * inner;
                for (std::size_t j = 0; j < inner; ++j) p[j] = src[ch];
            }
        const int id = push_(like, std::move(out));
        const int vid = v.id();
        if (node_raw_(vid).requires_grad) {
            set_grad_fn_(id, [vid](Graph& g, int adj,
                                   std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> gv = g.channel_sum({&g, adj});
                out_g.emplace_back(vid, gv.id());
            });
        }
        return {this, id};
    }

    // [N, ...] -> [N]; Euclidean norm over trailing dims.
    Tensor<T> l2_norm_per_sample(Tensor<T> x) {
        check_nonempty_(x, "l2_norm_per_sample");
        const Shape s = node_(x).shape;
        const std::size_t n = s[0];
        const std::size_t inner = shape_numel(s) / n;
        const auto& v = node_(x).values;
        std::vector<T> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < inner; ++j) {
                const T w = v[i * inner + j];
                acc += w * w;
            }
            out[i] = std::sqrt(acc);
        }
        const int id = push_({n}, std::move(out));
        const int xid = x.id();
        if (node_raw_(xid).requires_grad) {
            Shape xshape = s;
            set_grad_fn_(id, [xid, xshape, id](Graph& g, int adj,
                                               std::vector<std::pair<int, int>>& out_g) {
                // d||x||/dx = x / ||x||; the norm is guarded away from zero so
                // a vanishing gradient field stays zero instead of NaN.
                Tensor<T> nrm = g.clamp_min(Tensor<T>{&g, id}, T(1e-30));
                Tensor<T> coef = g.div(Tensor<T>{&g, adj}, nrm);
                Tensor<T> gx = g.mul(g.sample_broadcast(coef, xshape), Tensor<T>{&g, xid});
                out_g.emplace_back(xid, gx.id());
            });
        }
        return {this, id};
    }

    Tensor<T> reshape(Tensor<T> x, Shape shape) {
        validate_shape_(shape);
        if (shape_numel(shape) != node_(x).values.size())
            throw dimension_error("reshape: cannot view " + shape_str(node_(x).shape) +
                                  " as " + shape_str(shape));
        const int id = push_(shape, node_(x).values);
        const int xid = x.id();
        if (node_raw_(xid).requires_grad) {
            Shape xshape = node_raw_(xid).shape;
            set_grad_fn_(id, [xid, xshape](Graph& g, int adj,
                                           std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> gx = g.reshape({&g, adj}, xshape);
                out_g.emplace_back(xid, gx.id());
            });
        }
        return {this, id};
    }

    // ---- convolutions ---------------------------------------------------

    // x: [N,C,D,H,W], kernel: [F,C,kd,kh,kw] -> [N,F,D',H',W'].
    Tensor<T> conv3d(Tensor<T> x, Tensor<T> kernel, long stride, long padding) {
        const conv::Geom geom = conv_geom_(x, kernel, stride, padding);
        std::vector<T> out(geom.n * geom.cout * geom.out_spatial());
        if (conv_backend == ConvBackend::direct)
            conv::conv3d_direct(geom, node_(x).values.data(), node_(kernel).values.data(),
                                out.data());
        else
            conv::conv3d_gemm(geom, node_(x).values.data(), node_(kernel).values.data(),
                              out.data());
        const int id =
            push_({geom.n, geom.cout, geom.out[0], geom.out[1], geom.out[2]},
                  std::move(out));
        const int xid = x.id(), kid = kernel.id();
        if (node_raw_(xid).requires_grad || node_raw_(kid).requires_grad) {
            const std::array<std::size_t, 3> in_sp = geom.in;
            set_grad_fn_(id, [xid, kid, stride, padding, in_sp](
                                 Graph& g, int adj, std::vector<std::pair<int, int>>& out_g) {
                if (g.node_raw_(xid).requires_grad) {
                    Tensor<T> gx = g.conv_transpose3d({&g, adj}, {&g, kid}, stride,
                                                      padding, in_sp);
                    out_g.emplace_back(xid, gx.id());
                }
                if (g.node_raw_(kid).requires_grad) {
                    Tensor<T> gk =
                        g.conv3d_kernel_grad({&g, xid}, {&g, adj}, stride, padding,
                                             {g.node_raw_(kid).shape[2],
                                              g.node_raw_(kid).shape[3],
                                              g.node_raw_(kid).shape[4]});
                    out_g.emplace_back(kid, gk.id());
                }
            });
        }
        return {this, id};
    }

    // y: [N,Ci,D,H,W], kernel: [Ci,Co,kd,kh,kw] -> [N,Co,D'',H'',W''].
    Tensor<T> conv_transpose3d(Tensor<T> y, Tensor<T> kernel, long stride, long padding) {
        check_conv_args_(y, kernel, stride, padding, "conv_transpose3d");
        const Shape& ys = node_(y).shape;
        const Shape& ks = node_(kernel).shape;
        std::array<std::size_t, 3> out_sp;
        for (int a = 0; a < 3; ++a) {
            const std::size_t d = ys[static_cast<std::size_t>(a) + 2];
            const std::size_t kd = ks[static_cast<std::size_t>(a) + 2];
            if ((d - 1) * static_cast<std::size_t>(stride) + kd <
                2 * static_cast<std::size_t>(padding) + 1)
                throw dimension_error("conv_transpose3d: empty output on axis " +
                                      std::to_string(a));
            out_sp[static_cast<std::size_t>(a)] = conv::convt_out_extent(d, kd, stride, padding);
        }
        return conv_transpose3d(y, kernel, stride, padding, out_sp);
    }

    // Variant with explicit output extents, each in [default, default+stride).
    Tensor<T> conv_transpose3d(Tensor<T> y, Tensor<T> kernel, long stride, long padding,
                               std::array<std::size_t, 3> out_spatial) {
        check_conv_args_(y, kernel, stride, padding, "conv_transpose3d");
        const Shape& ys = node_(y).shape;
        const Shape& ks = node_(kernel).shape;
        if (ys[1] != ks[0])
            throw dimension_error("conv_transpose3d: input channels " +
                                  std::to_string(ys[1]) + " != kernel dim0 " +
                                  std::to_string(ks[0]));
        conv::Geom geom;
        geom.n = ys[0];
        geom.cin = ys[1];
        geom.cout = ks[1];
        geom.in = {ys[2], ys[3], ys[4]};
        geom.k = {ks[2], ks[3], ks[4]};
        geom.out = out_spatial;
        geom.stride = stride;
        geom.pad = padding;
        for (int a = 0; a < 3; ++a) {
            const std::size_t base = conv::convt_out_extent(
                geom.in[static_cast<std::size_t>(a)], geom.k[static_cast<std::size_t>(a)],
                stride, padding);
            const std::size_t got = out_spatial[static_cast<std::size_t>(a)];
            if (got < base || got >= base + static_cast<std::size_t>(stride))
                throw dimension_error("conv_transpose3d: output extent " +
                                      std::to_string(got) + " outside [" +
                                      std::to_string(base) + ", " +
                                      std::to_string(base + static_cast<std::size_t>(stride)) +
                                      ") on axis " + std::to_string(a));
        }
        std::vector<T> out(geom.n * geom.cout * geom.out_spatial());
        if (conv_backend == ConvBackend::direct)
            conv::conv_transpose3d_direct(geom, node_(y).values.data(),
                                          node_(kernel).values.data(), out.data());
        else
            conv::conv_transpose3d_gemm(geom, node_(y).values.data(),
                                        node_(kernel).values.data(), out.data());
        const int id =
            push_({geom.n, geom.cout, geom.out[0], geom.out[1], geom.out[2]},
                  std::move(out));
        const int yid = y.id(), kid = kernel.id();
        if (node_raw_(yid).requires_grad || node_raw_(kid).requires_grad) {
            set_grad_fn_(id, [yid, kid, stride, padding](
                                 Graph& g, int adj, std::vector<std::pair<int, int>>& out_g) {
                if (g.node_raw_(yid).requires_grad) {
                    Tensor<T> gy = g.conv3d({&g, adj}, {&g, kid}, stride, padding);
                    out_g.emplace_back(yid, gy.id());
                }
                if (g.node_raw_(kid).requires_grad) {
                    Tensor<T> gk =
                        g.conv3d_kernel_grad({&g, adj}, {&g, yid}, stride, padding,
                                             {g.node_raw_(kid).shape[2],
                                              g.node_raw_(kid).shape[3],
                                              g.node_raw_(kid).shape[4]});
                    out_g.emplace_back(kid, gk.id());
                }
            });
        }
        return {this, id};
    }

    // Correlation producing a kernel-shaped tensor: x is conv3d-input-like
    // [N,C,...], gy is conv3d-output-like [N,F,...]; result [F,C,kd,kh,kw].
    Tensor<T> conv3d_kernel_grad(Tensor<T> x, Tensor<T> gy, long stride, long padding,
                                 std::array<std::size_t, 3> kernel_sp) {
        if (stride <= 0)
            throw std::invalid_argument("conv3d_kernel_grad: stride must be positive");
        if (padding < 0)
            throw std::invalid_argument("conv3d_kernel_grad: padding must be non-negative");
        const Shape& xs = node_(x).shape;
        const Shape& gs = node_(gy).shape;
        if (xs.size() != 5 || gs.size() != 5)
            throw dimension_error("conv3d_kernel_grad: operands must be rank 5");
        if (xs[0] != gs[0])
            throw dimension_error("conv3d_kernel_grad: batch mismatch");
        conv::Geom geom;
        geom.n = xs[0];
        geom.cin = xs[1];
        geom.cout = gs[1];
        geom.in = {xs[2], xs[3], xs[4]};
        geom.k = kernel_sp;
        geom.out = {gs[2], gs[3], gs[4]};
        geom.stride = stride;
        geom.pad = padding;
        for (int a = 0; a < 3; ++a) {
            const auto ai = static_cast<std::size_t>(a);
            if (geom.in[ai] + 2 * static_cast<std::size_t>(padding) < geom.k[ai] ||
                conv::conv_out_extent(geom.in[ai], geom.k[ai], stride, padding) !=
                    geom.out[ai])
                throw dimension_error(
                    "conv3d_kernel_grad: inconsistent geometry on axis " +
                    std::to_string(a));
        }
        std::vector<T> out(geom.cout * geom.cin * geom.k_elems());
        if (conv_backend == ConvBackend::direct)
            conv::conv3d_kernel_grad_direct(geom, node_(x).values.data(),
                                            node_(gy).values.data(), out.data());
        else
            conv::conv3d_kernel_grad_gemm(geom, node_(x).values.data(),
                                          node_(gy).values.data(), out.data());
        const int id = push_({geom.cout, geom.cin, geom.k[0], geom.k[1], geom.k[2]},
                             std::move(out));
        const int xid = x.id(), gid = gy.id();
        if (node_raw_(xid).requires_grad || node_raw_(gid).requires_grad) {
            const std::array<std::size_t, 3> x_sp = geom.in;
            set_grad_fn_(id, [xid, gid, stride, padding, x_sp](
                                 Graph& g, int adj, std::vector<std::pair<int, int>>& out_g) {
                if (g.node_raw_(xid).requires_grad) {
                    Tensor<T> gx = g.conv_transpose3d({&g, gid}, {&g, adj}, stride,
                                                      padding, x_sp);
                    out_g.emplace_back(xid, gx.id());
                }
                if (g.node_raw_(gid).requires_grad) {
                    Tensor<T> gg = g.conv3d({&g, xid}, {&g, adj}, stride, padding);
                    out_g.emplace_back(gid, gg.id());
                }
            });
        }
        return {this, id};
    }

    // ---- autodiff -------------------------------------------------------

    // Accumulates dLoss/dLeaf into every requires_grad leaf. Repeated calls
    // without zero_grads() add up.
    void backward(Tensor<T> loss) {
        check_mine_(loss, "backward");
        if (node_(loss).values.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(node_(loss).shape));
        const int root = loss.id();
        std::vector<int> adjoint = sweep_(root);
        for (int i = 0; i <= root; ++i) {
            GraphNode& nd = nodes_[static_cast<std::size_t>(i)];
            if (!nd.is_leaf || !nd.requires_grad || adjoint[static_cast<std::size_t>(i)] < 0)
                continue;
            const auto& g =
                nodes_[static_cast<std::size_t>(adjoint[static_cast<std::size_t>(i)])].values;
            if (nd.grad.empty()) nd.grad.assign(nd.values.size(), T(0));
            for (std::size_t j = 0; j < g.size(); ++j) nd.grad[j] += g[j];
        }
    }

    // dOutput/dInput as a tensor. With create_graph the result participates
    // in further differentiation; otherwise it is detached.
    Tensor<T> grad_of_output_wrt_input(Tensor<T> output, Tensor<T> input,
                                       bool create_graph) {
        check_mine_(output, "grad_of_output_wrt_input");
        check_mine_(input, "grad_of_output_wrt_input");
        if (node_(output).values.size() != 1)
            throw std::invalid_argument("grad_of_output_wrt_input: output must be scalar");
        if (input.id() > output.id())
            throw std::invalid_argument(
                "grad_of_output_wrt_input: input does not precede output in the graph");
        if (!node_(input).requires_grad)
            throw std::invalid_argument(
                "grad_of_output_wrt_input: input does not require gradients");
        std::vector<int> adjoint = sweep_(output.id());
        const int gid = adjoint[static_cast<std::size_t>(input.id())];
        Tensor<T> result = gid >= 0
                               ? Tensor<T>{this, gid}
                               : full(node_(input).shape, T(0));
        return create_graph ? result : detach(result);
    }

    void zero_grads() {
        for (auto& nd : nodes_)
            if (!nd.grad.empty()) std::fill(nd.grad.begin(), nd.grad.end(), T(0));
    }

  private:
    friend class Tensor<T>;

    using GradFn = std::function<void(Graph&, int adj_id,
                                      std::vector<std::pair<int, int>>& input_grads)>;

    struct GraphNode {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;
        bool requires_grad = false;
        bool is_leaf = false;
        GradFn grad_fn;
    };

    std::vector<GraphNode> nodes_;

    GraphNode& node_raw_(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const GraphNode& node_(Tensor<T> t) const {
        return nodes_[static_cast<std::size_t>(t.id())];
    }
    GraphNode& node_(Tensor<T> t) { return nodes_[static_cast<std::size_t>(t.id())]; }

    static void validate_shape_(const Shape& s) {
        if (s.empty()) throw std::invalid_argument("shape: rank must be >= 1");
        for (std::size_t d : s)
            if (d == 0) throw std::invalid_argument("shape: extents must be positive");
    }

    void check_mine_(Tensor<T> t, const char* who) const {
        if (!t.valid() || t.graph() != this ||
            t.id() >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument(std::string(who) +
                                        ": tensor does not belong to this graph");
    }

    void check_same_shape_(Tensor<T> a, Tensor<T> b, const char* who) const {
        check_mine_(a, who);
        check_mine_(b, who);
        if (node_(a).shape != node_(b).shape)
            throw dimension_error(std::string(who) + ": shape mismatch " +
                                  shape_str(node_(a).shape) + " vs " +
                                  shape_str(node_(b).shape));
    }

    void check_nonempty_(Tensor<T> x, const char* who) const {
        check_mine_(x, who);
        if (node_(x).values.empty())
            throw std::invalid_argument(std::string(who) + ": empty tensor");
    }

    int push_(Shape shape, std::vector<T> values) {
        GraphNode nd;
        nd.shape = std::move(shape);
        nd.values = std::move(values);
        nodes_.push_back(std::move(nd));
        return static_cast<int>(nodes_.size()) - 1;
    }

    template <class F>
    void set_grad_fn_(int id, F fn) {
        nodes_[static_cast<std::size_t>(id)].requires_grad = true;
        nodes_[static_cast<std::size_t>(id)].grad_fn = std::move(fn);
    }

    template <class Fwd, class Bwd>
    Tensor<T> unary_(Tensor<T> x, Fwd fwd, Bwd bwd) {
        check_mine_(x, "unary op");
        const auto& v = node_(x).values;
        std::vector<T> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
        const int id = push_(node_(x).shape, std::move(out));
        const int xid = x.id();
        if (node_raw_(xid).requires_grad) {
            set_grad_fn_(id, [xid, id, bwd](Graph& g, int adj,
                                            std::vector<std::pair<int, int>>& out_g) {
                Tensor<T> gx = bwd(g, Tensor<T>{&g, adj}, Tensor<T>{&g, xid},
                                   Tensor<T>{&g, id});
                out_g.emplace_back(xid, gx.id());
            });
        }
        return {this, id};
    }

    template <class Fwd, class Bwd>
    Tensor<T> binary_(Tensor<T> a, Tensor<T> b, const char* name, Fwd fwd, Bwd bwd) {
        check_same_shape_(a, b, name);
        const auto& av = node_(a).values;
        const auto& bv = node_(b).values;
        std::vector<T> out(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
        const int id = push_(node_(a).shape, std::move(out));
        const int aid = a.id(), bid = b.id();
        if (node_raw_(aid).requires_grad || node_raw_(bid).requires_grad) {
            set_grad_fn_(id, [aid, bid, bwd](Graph& g, int adj,
                                             std::vector<std::pair<int, int>>& out_g) {
                auto [ga, gb] = bwd(g, Tensor<T>{&g, adj}, Tensor<T>{&g, aid},
                                    Tensor<T>{&g, bid});
                if (g.node_raw_(aid).requires_grad) out_g.emplace_back(aid, ga.id());
                if (g.node_raw_(bid).requires_grad) out_g.emplace_back(bid, gb.id());
            });
        }
        return {this, id};
    }

    conv::Geom conv_geom_(Tensor<T> x, Tensor<T> kernel, long stride, long padding) {
        check_conv_args_(x, kernel, stride, padding, "conv3d");
        const Shape& xs = node_(x).shape;
        const Shape& ks = node_(kernel).shape;
        if (xs[1] != ks[1])
            throw dimension_error("conv3d: input channels " + std::to_string(xs[1]) +
                                  " != kernel channels " + std::to_string(ks[1]));
        conv::Geom geom;
        geom.n = xs[0];
        geom.cin = xs[1];
        geom.cout = ks[0];
        geom.in = {xs[2], xs[3], xs[4]};
        geom.k = {ks[2], ks[3], ks[4]};
        geom.stride = stride;
        geom.pad = padding;
        for (int a = 0; a < 3; ++a) {
            const std::size_t d = geom.in[static_cast<std::size_t>(a)];
            const std::size_t kd = geom.k[static_cast<std::size_t>(a)];
            if (d + 2 * static_cast<std::size_t>(padding) < kd)
                throw dimension_error("conv3d: kernel exceeds padded input on axis " +
                                      std::to_string(a));
            geom.out[static_cast<std::size_t>(a)] = conv::conv_out_extent(d, kd, stride, padding);
        }
        return geom;
    }

    void check_conv_args_(Tensor<T> x, Tensor<T> kernel, long stride, long padding,
                          const char* who) const {
        check_mine_(x, who);
        check_mine_(kernel, who);
        if (stride <= 0)
            throw std::invalid_argument(std::string(who) + ": stride must be positive");
        if (padding < 0)
            throw std::invalid_argument(std::string(who) +
                                        ": padding must be non-negative");
        if (node_(x).shape.size() != 5)
            throw dimension_error(std::string(who) + ": input must be rank 5, got " +
                                  shape_str(node_(x).shape));
        if (node_(kernel).shape.size() != 5)
            throw dimension_error(std::string(who) + ": kernel must be rank 5, got " +
                                  shape_str(node_(kernel).shape));
    }

    // Reverse sweep from root over the tape prefix [0, root]. Returns the
    // adjoint node id per node (-1 where no gradient flows). Backward rules
    // append new nodes, which later sweeps may traverse in turn.
    std::vector<int> sweep_(int root) {
        std::vector<int> adjoint(static_cast<std::size_t>(root) + 1, -1);
        if (!nodes_[static_cast<std::size_t>(root)].requires_grad) return adjoint;
        adjoint[static_cast<std::size_t>(root)] =
            full(nodes_[static_cast<std::size_t>(root)].shape, T(1)).id();
        std::vector<std::pair<int, int>> input_grads;
        for (int k = root; k >= 0; --k) {
            const int adj = adjoint[static_cast<std::size_t>(k)];
            if (adj < 0) continue;
            // Copy the grad_fn handle: backward rules push nodes and may
            // reallocate the tape.
            GradFn fn = nodes_[static_cast<std::size_t>(k)].grad_fn;
            if (!fn) continue;
            input_grads.clear();
            fn(*this, adj, input_grads);
            for (auto [iid, gid] : input_grads) {
                int& slot = adjoint[static_cast<std::size_t>(iid)];
                slot = slot < 0 ? gid : add(Tensor<T>{this, slot}, Tensor<T>{this, gid}).id();
            }
        }
        return adjoint;
    }
};

template <typename T>
const Shape& Tensor<T>::shape() const {
    return graph_->node_(*this).shape;
}
template <typename T>
std::size_t Tensor<T>::numel() const {
    return graph_->node_(*this).values.size();
}
template <typename T>
const std::vector<T>& Tensor<T>::values() const {
    return graph_->node_(*this).values;
}
template <typename T>
std::vector<T>& Tensor<T>::mutable_values() {
    return graph_->node_(*this).values;
}
template <typename T>
bool Tensor<T>::requires_grad() const {
    return graph_->node_(*this).requires_grad;
}
template <typename T>
const std::vector<T>* Tensor<T>::grad() const {
    const auto& g = graph_->node_(*this).grad;
    return g.empty() ? nullptr : &g;
}
template <typename T>
T Tensor<T>::scalar() const {
    const auto& v = values();
    if (v.size() != 1)
        throw std::invalid_argument("scalar(): tensor has " + std::to_string(v.size()) +
                                    " elements");
    return v[0];
}

}  // namespace voxgan
