#include "inspex/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "inspex/errors.hpp"

namespace inspex::ad {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw UsageError(std::string(op) + ": incompatible shapes " + a.str() + " vs " + b.str());
}

void require_same(const char* op, const Shape& a, const Shape& b) {
    if (!(a == b)) shape_fail(op, a, b);
}

template <typename T>
TapeT<T>* tape_of(std::initializer_list<const TensorT<T>*> xs) {
    TapeT<T>* tape = nullptr;
    for (const TensorT<T>* x : xs) {
        if (x->tracked()) {
            if (tape && tape != x->tape) {
                throw UsageError("op inputs belong to different tapes");
            }
            tape = x->tape;
        }
    }
    return tape;
}

template <typename T>
void accumulate(std::vector<T>& into, const std::vector<T>& from) {
    for (size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

// Gathers conv patches: col is (C*kh*kw) x (out_h*out_w), sampling `src`
// (one sample, C x H x W) at stride/pad. Out-of-bounds reads are zero.
template <typename T>
void im2col(const T* src, int C, int H, int W, int kh, int kw, int stride, int pad, int out_h,
            int out_w, T* col) {
    const int64_t plane = static_cast<int64_t>(H) * W;
    const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;
    int64_t row = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                T* dst = col + row * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + static_cast<int64_t>(oy) * out_w,
                                  dst + static_cast<int64_t>(oy + 1) * out_w, T{0});
                        continue;
                    }
                    const T* src_row = src + c * plane + static_cast<int64_t>(iy) * W;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        dst[static_cast<int64_t>(oy) * out_w + ox] =
                            (ix >= 0 && ix < W) ? src_row[ix] : T{0};
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds col back into the (C x H x W) image.
template <typename T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int out_h,
            int out_w, T* dst) {
    const int64_t plane = static_cast<int64_t>(H) * W;
    const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;
    int64_t row = 0;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++row) {
                const T* src_col = col + row * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) continue;
                    T* dst_row = dst + c * plane + static_cast<int64_t>(iy) * W;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < W) dst_row[ix] += src_col[static_cast<int64_t>(oy) * out_w + ox];
                    }
                }
            }
        }
    }
}

} // namespace

template <typename T>
TensorT<T> make_tensor(Shape shape, T fill) {
    TensorT<T> t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(static_cast<size_t>(shape.numel()), fill);
    return t;
}

template <typename T>
TensorT<T> make_tensor(Shape shape, std::vector<T> values) {
    if (static_cast<int64_t>(values.size()) != shape.numel()) {
        throw UsageError("make_tensor: buffer length does not match shape " + shape.str());
    }
    TensorT<T> t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    return t;
}

template <typename T>
TensorT<T> TapeT<T>::leaf(const TensorT<T>& value) {
    TensorT<T> out = value;
    out.tape = this;
    out.node = record(value.shape, {}, {});
    return out;
}

template <typename T>
int TapeT<T>::record(Shape out_shape, std::vector<int> parents,
                     std::function<void(TapeT<T>&, int)> backward_rule) {
    Node node;
    node.shape = out_shape;
    node.parents = std::move(parents);
    node.backward_rule = std::move(backward_rule);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
std::vector<T>& TapeT<T>::grad(int node) {
    Node& n = nodes_.at(static_cast<size_t>(node));
    if (n.grad_buf.empty()) n.grad_buf.assign(static_cast<size_t>(n.shape.numel()), T{0});
    return n.grad_buf;
}

template <typename T>
bool TapeT<T>::has_grad(int node) const {
    return !nodes_.at(static_cast<size_t>(node)).grad_buf.empty();
}

template <typename T>
const Shape& TapeT<T>::node_shape(int node) const {
    return nodes_.at(static_cast<size_t>(node)).shape;
}

template <typename T>
void TapeT<T>::backward(const TensorT<T>& loss) {
    if (!loss.tracked() || loss.tape != this) {
        throw UsageError("backward: loss is not tracked on this tape");
    }
    if (loss.numel() != 1) {
        throw UsageError("backward: loss must be scalar, got shape " + loss.shape.str());
    }
    grad(loss.node)[0] = T{1};
    for (int id = loss.node; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad_buf.empty() || !n.backward_rule) continue;
        n.backward_rule(*this, id);
    }
}

template <typename T>
void TapeT<T>::reset() {
    nodes_.clear();
}

// ---- elementwise ops ----

namespace {

template <typename T, typename Fwd, typename MakeBwd>
TensorT<T> unary_op(const TensorT<T>& x, Fwd&& fwd, MakeBwd&& make_bwd) {
    TensorT<T> out = make_tensor<T>(x.shape);
    fwd(*x.data, *out.data);
    TapeT<T>* tape = x.tracked() ? x.tape : nullptr;
    if (tape) {
        out.tape = tape;
        out.node = tape->record(x.shape, {x.node}, make_bwd(out));
    }
    return out;
}

} // namespace

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    return unary_op(
        x,
        [](const std::vector<T>& in, std::vector<T>& out) {
            for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
        },
        [&x](const TensorT<T>&) {
            return [xd = x.data, xn = x.node](TapeT<T>& t, int self) {
                const std::vector<T>& gy = t.grad(self);
                std::vector<T>& gx = t.grad(xn);
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*xd)[i] > T{0} ? gy[i] : T{0};
            };
        });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, double slope) {
    const T s = static_cast<T>(slope);
    return unary_op(
        x,
        [s](const std::vector<T>& in, std::vector<T>& out) {
            for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : s * in[i];
        },
        [&x, s](const TensorT<T>&) {
            return [xd = x.data, xn = x.node, s](TapeT<T>& t, int self) {
                const std::vector<T>& gy = t.grad(self);
                std::vector<T>& gx = t.grad(xn);
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*xd)[i] > T{0} ? gy[i] : s * gy[i];
            };
        });
}

template <typename T>
TensorT<T> tanh_op(const TensorT<T>& x) {
    return unary_op(
        x,
        [](const std::vector<T>& in, std::vector<T>& out) {
            for (size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
        },
        [&x](const TensorT<T>& out) {
            return [yd = out.data, xn = x.node](TapeT<T>& t, int self) {
                const std::vector<T>& gy = t.grad(self);
                std::vector<T>& gx = t.grad(xn);
                for (size_t i = 0; i < gx.size(); ++i) {
                    const T y = (*yd)[i];
                    gx[i] += gy[i] * (T{1} - y * y);
                }
            };
        });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, double c) {
    const T s = static_cast<T>(c);
    return unary_op(
        x,
        [s](const std::vector<T>& in, std::vector<T>& out) {
            for (size_t i = 0; i < in.size(); ++i) out[i] = s * in[i];
        },
        [&x, s](const TensorT<T>&) {
            return [xn = x.node, s](TapeT<T>& t, int self) {
                const std::vector<T>& gy = t.grad(self);
                std::vector<T>& gx = t.grad(xn);
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += s * gy[i];
            };
        });
}

template <typename T>
TensorT<T> add(const TensorT<T>& x, const TensorT<T>& y) {
    require_same("add", x.shape, y.shape);
    TensorT<T> out = make_tensor<T>(x.shape);
    for (size_t i = 0; i < out.data->size(); ++i) (*out.data)[i] = (*x.data)[i] + (*y.data)[i];
    TapeT<T>* tape = tape_of<T>({&x, &y});
    if (tape) {
        out.tape = tape;
        const int xn = x.tracked() ? x.node : -1;
        const int yn = y.tracked() ? y.node : -1;
        std::vector<int> parents;
        if (xn >= 0) parents.push_back(xn);
        if (yn >= 0) parents.push_back(yn);
        out.node = tape->record(x.shape, parents, [xn, yn](TapeT<T>& t, int self) {
            const std::vector<T>& gy = t.grad(self);
            if (xn >= 0) accumulate(t.grad(xn), gy);
            if (yn >= 0) accumulate(t.grad(yn), gy);
        });
    }
    return out;
}

namespace {

template <typename T>
TensorT<T> reduction_loss(const char* name, const TensorT<T>& x, const TensorT<T>& y, bool l1) {
    require_same(name, x.shape, y.shape);
    const int64_t n = x.numel();
    double acc = 0.0; // 64-bit accumulation regardless of T
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>((*x.data)[static_cast<size_t>(i)]) -
                         static_cast<double>((*y.data)[static_cast<size_t>(i)]);
        acc += l1 ? std::abs(d) : d * d;
    }
    TensorT<T> out = make_tensor<T>({1, 1, 1, 1});
    (*out.data)[0] = static_cast<T>(acc / static_cast<double>(n));
    TapeT<T>* tape = tape_of<T>({&x, &y});
    if (tape) {
        out.tape = tape;
        const int xn = x.tracked() ? x.node : -1;
        const int yn = y.tracked() ? y.node : -1;
        std::vector<int> parents;
        if (xn >= 0) parents.push_back(xn);
        if (yn >= 0) parents.push_back(yn);
        out.node = tape->record(
            {1, 1, 1, 1}, parents, [xd = x.data, yd = y.data, xn, yn, n, l1](TapeT<T>& t, int self) {
                const T g = t.grad(self)[0];
                const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
                T* gx = xn >= 0 ? t.grad(xn).data() : nullptr;
                T* gy = yn >= 0 ? t.grad(yn).data() : nullptr;
                for (int64_t i = 0; i < n; ++i) {
                    const T d = (*xd)[static_cast<size_t>(i)] - (*yd)[static_cast<size_t>(i)];
                    T gi;
                    if (l1) {
                        gi = g * inv_n * (d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0}));
                    } else {
                        gi = g * inv_n * T{2} * d;
                    }
                    if (gx) gx[i] += gi;
                    if (gy) gy[i] -= gi;
                }
            });
    }
    return out;
}

} // namespace

template <typename T>
TensorT<T> l1_loss(const TensorT<T>& x, const TensorT<T>& y) {
    return reduction_loss("l1_loss", x, y, true);
}

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& x, const TensorT<T>& y) {
    return reduction_loss("mse_loss", x, y, false);
}

template <typename T>
TensorT<T> reflection_pad(const TensorT<T>& x, int p) {
    if (p < 0) throw UsageError("reflection_pad: negative padding");
    if (p >= x.shape.h || p >= x.shape.w) {
        throw UsageError("reflection_pad: padding " + std::to_string(p) +
                         " too large for input " + x.shape.str());
    }
    const Shape in = x.shape;
    const Shape out_shape{in.n, in.c, in.h + 2 * p, in.w + 2 * p};
    TensorT<T> out = make_tensor<T>(out_shape);
    auto reflect = [](int i, int n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
        return i;
    };
    const int64_t in_plane = static_cast<int64_t>(in.h) * in.w;
    const int64_t out_plane = static_cast<int64_t>(out_shape.h) * out_shape.w;
    for (int64_t nc = 0; nc < static_cast<int64_t>(in.n) * in.c; ++nc) {
        const T* src = x.ptr() + nc * in_plane;
        T* dst = out.ptr() + nc * out_plane;
        for (int oy = 0; oy < out_shape.h; ++oy) {
            const int iy = reflect(oy - p, in.h);
            for (int ox = 0; ox < out_shape.w; ++ox) {
                const int ix = reflect(ox - p, in.w);
                dst[static_cast<int64_t>(oy) * out_shape.w + ox] =
                    src[static_cast<int64_t>(iy) * in.w + ix];
            }
        }
    }
    if (x.tracked()) {
        out.tape = x.tape;
        out.node = x.tape->record(out_shape, {x.node}, [in, out_shape, p, xn = x.node, reflect](
                                                           TapeT<T>& t, int self) {
            const std::vector<T>& gy = t.grad(self);
            std::vector<T>& gx = t.grad(xn);
            const int64_t in_plane2 = static_cast<int64_t>(in.h) * in.w;
            const int64_t out_plane2 = static_cast<int64_t>(out_shape.h) * out_shape.w;
            for (int64_t nc = 0; nc < static_cast<int64_t>(in.n) * in.c; ++nc) {
                for (int oy = 0; oy < out_shape.h; ++oy) {
                    const int iy = reflect(oy - p, in.h);
                    for (int ox = 0; ox < out_shape.w; ++ox) {
                        const int ix = reflect(ox - p, in.w);
                        gx[static_cast<size_t>(nc * in_plane2 + iy * in.w + ix)] +=
                            gy[static_cast<size_t>(nc * out_plane2 + oy * out_shape.w + ox)];
                    }
                }
            }
        });
    }
    return out;
}

// ---- convolution ----

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride, int pad) {
    if (stride < 1) throw UsageError("conv2d: stride must be >= 1");
    if (pad < 0) throw UsageError("conv2d: negative padding");
    // w is (Cout, Cin, kh, kw) mapped onto Shape fields (n=Cout, c=Cin, h=kh, w=kw).
    if (x.shape.c != w.shape.c) shape_fail("conv2d", x.shape, w.shape);
    if (b.shape.numel() != w.shape.n) shape_fail("conv2d bias", b.shape, w.shape);
    const int N = x.shape.n, Cin = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int Cout = w.shape.n, kh = w.shape.h, kw = w.shape.w;
    const int out_h = (H + 2 * pad - kh) / stride + 1;
    const int out_w = (W + 2 * pad - kw) / stride + 1;
    if (out_h <= 0 || out_w <= 0) {
        throw UsageError("conv2d: kernel does not fit input " + x.shape.str());
    }
    const Shape out_shape{N, Cout, out_h, out_w};
    TensorT<T> out = make_tensor<T>(out_shape);

    const int64_t K = static_cast<int64_t>(Cin) * kh * kw;
    const int64_t P = static_cast<int64_t>(out_h) * out_w;
    std::vector<T> col(static_cast<size_t>(K * P));
    CMapRM<T> wm(w.ptr(), Cout, K);
    for (int n = 0; n < N; ++n) {
        im2col(x.ptr() + static_cast<int64_t>(n) * Cin * H * W, Cin, H, W, kh, kw, stride, pad, out_h,
               out_w, col.data());
        CMapRM<T> cm(col.data(), K, P);
        MapRM<T> om(out.ptr() + static_cast<int64_t>(n) * Cout * P, Cout, P);
        om.noalias() = wm * cm;
        for (int co = 0; co < Cout; ++co) om.row(co).array() += (*b.data)[static_cast<size_t>(co)];
    }

    TapeT<T>* tape = tape_of<T>({&x, &w, &b});
    if (tape) {
        out.tape = tape;
        const int xn = x.tracked() ? x.node : -1;
        const int wn = w.tracked() ? w.node : -1;
        const int bn = b.tracked() ? b.node : -1;
        std::vector<int> parents;
        for (int id : {xn, wn, bn}) {
            if (id >= 0) parents.push_back(id);
        }
        out.node = tape->record(
            out_shape, parents,
            [xd = x.data, wd = w.data, xn, wn, bn, N, Cin, H, W, Cout, kh, kw, stride, pad, out_h,
             out_w, K, P](TapeT<T>& t, int self) {
                const std::vector<T>& gy = t.grad(self);
                std::vector<T> col2(static_cast<size_t>(K * P));
                CMapRM<T> wm2(wd->data(), Cout, K);
                for (int n = 0; n < N; ++n) {
                    CMapRM<T> gym(gy.data() + static_cast<int64_t>(n) * Cout * P, Cout, P);
                    if (wn >= 0 || xn >= 0) {
                        im2col(xd->data() + static_cast<int64_t>(n) * Cin * H * W, Cin, H, W, kh, kw,
                               stride, pad, out_h, out_w, col2.data());
                    }
                    if (wn >= 0) {
                        MapRM<T> gwm(t.grad(wn).data(), Cout, K);
                        CMapRM<T> cm(col2.data(), K, P);
                        gwm.noalias() += gym * cm.transpose();
                    }
                    if (xn >= 0) {
                        MatRM<T> gcol = wm2.transpose() * gym;
                        col2im(gcol.data(), Cin, H, W, kh, kw, stride, pad, out_h, out_w,
                               t.grad(xn).data() + static_cast<int64_t>(n) * Cin * H * W);
                    }
                    if (bn >= 0) {
                        std::vector<T>& gb = t.grad(bn);
                        for (int co = 0; co < Cout; ++co) {
                            gb[static_cast<size_t>(co)] += gym.row(co).sum();
                        }
                    }
                }
            });
    }
    return out;
}

template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride,
                            int pad, int out_pad) {
    if (stride < 1) throw UsageError("conv_transpose2d: stride must be >= 1");
    if (pad < 0 || out_pad < 0 || out_pad >= stride) {
        throw UsageError("conv_transpose2d: invalid padding");
    }
    // w is (Cin, Cout, kh, kw).
    if (x.shape.c != w.shape.n) shape_fail("conv_transpose2d", x.shape, w.shape);
    if (b.shape.numel() != w.shape.c) shape_fail("conv_transpose2d bias", b.shape, w.shape);
    const int N = x.shape.n, Cin = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int Cout = w.shape.c, kh = w.shape.h, kw = w.shape.w;
    const int out_h = (H - 1) * stride - 2 * pad + kh + out_pad;
    const int out_w = (W - 1) * stride - 2 * pad + kw + out_pad;
    if (out_h <= 0 || out_w <= 0) {
        throw UsageError("conv_transpose2d: degenerate output from input " + x.shape.str());
    }
    const Shape out_shape{N, Cout, out_h, out_w};
    TensorT<T> out = make_tensor<T>(out_shape);

    const int64_t K = static_cast<int64_t>(Cout) * kh * kw;
    const int64_t Pin = static_cast<int64_t>(H) * W;
    CMapRM<T> wm(w.ptr(), Cin, K);
    for (int n = 0; n < N; ++n) {
        CMapRM<T> xm(x.ptr() + static_cast<int64_t>(n) * Cin * Pin, Cin, Pin);
        MatRM<T> col = wm.transpose() * xm; // (Cout*kh*kw) x Pin
        T* dst = out.ptr() + static_cast<int64_t>(n) * Cout * out_h * out_w;
        // Scatter: the "image" is the output grid, patches indexed by input pixels.
        col2im(col.data(), Cout, out_h, out_w, kh, kw, stride, pad, H, W, dst);
        for (int co = 0; co < Cout; ++co) {
            T* plane = dst + static_cast<int64_t>(co) * out_h * out_w;
            const T bias = (*b.data)[static_cast<size_t>(co)];
            for (int64_t i = 0; i < static_cast<int64_t>(out_h) * out_w; ++i) plane[i] += bias;
        }
    }

    TapeT<T>* tape = tape_of<T>({&x, &w, &b});
    if (tape) {
        out.tape = tape;
        const int xn = x.tracked() ? x.node : -1;
        const int wn = w.tracked() ? w.node : -1;
        const int bn = b.tracked() ? b.node : -1;
        std::vector<int> parents;
        for (int id : {xn, wn, bn}) {
            if (id >= 0) parents.push_back(id);
        }
        out.node = tape->record(
            out_shape, parents,
            [xd = x.data, wd = w.data, xn, wn, bn, N, Cin, H, W, Cout, kh, kw, stride, pad, out_h,
             out_w, K, Pin](TapeT<T>& t, int self) {
                const std::vector<T>& gy = t.grad(self);
                std::vector<T> colY(static_cast<size_t>(K * Pin));
                CMapRM<T> wm2(wd->data(), Cin, K);
                for (int n = 0; n < N; ++n) {
                    // Gather dY patches on the input grid.
                    im2col(gy.data() + static_cast<int64_t>(n) * Cout * out_h * out_w, Cout, out_h,
                           out_w, kh, kw, stride, pad, H, W, colY.data());
                    CMapRM<T> cym(colY.data(), K, Pin);
                    if (xn >= 0) {
                        MapRM<T> gxm(t.grad(xn).data() + static_cast<int64_t>(n) * Cin * Pin, Cin, Pin);
                        gxm.noalias() += wm2 * cym;
                    }
                    if (wn >= 0) {
                        CMapRM<T> xm(xd->data() + static_cast<int64_t>(n) * Cin * Pin, Cin, Pin);
                        MapRM<T> gwm(t.grad(wn).data(), Cin, K);
                        gwm.noalias() += xm * cym.transpose();
                    }
                    if (bn >= 0) {
                        std::vector<T>& gb = t.grad(bn);
                        const T* gp = gy.data() + static_cast<int64_t>(n) * Cout * out_h * out_w;
                        for (int co = 0; co < Cout; ++co) {
                            T acc{0};
                            for (int64_t i = 0; i < static_cast<int64_t>(out_h) * out_w; ++i) {
                                acc += gp[static_cast<int64_t>(co) * out_h * out_w + i];
                            }
                            gb[static_cast<size_t>(co)] += acc;
                        }
                    }
                }
            });
    }
    return out;
}

// ---- instance norm ----

template <typename T>
TensorT<T> instance_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta) {
    constexpr double kEps = 1e-5;
    if (gamma.shape.numel() != x.shape.c || beta.shape.numel() != x.shape.c) {
        shape_fail("instance_norm affine", gamma.shape, x.shape);
    }
    const int N = x.shape.n, C = x.shape.c;
    const int64_t plane = static_cast<int64_t>(x.shape.h) * x.shape.w;
    TensorT<T> out = make_tensor<T>(x.shape);
    // Normalized activations and the inverse stddev are needed by the
    // backward rule; keep them alive in shared buffers.
    auto xhat = std::make_shared<std::vector<T>>(x.data->size());
    auto inv_sd = std::make_shared<std::vector<T>>(static_cast<size_t>(N) * C);

    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const T* src = x.ptr() + nc * plane;
        double mean = 0.0;
        for (int64_t i = 0; i < plane; ++i) mean += src[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (int64_t i = 0; i < plane; ++i) {
            const double d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(plane);
        const double is = 1.0 / std::sqrt(var + kEps);
        (*inv_sd)[static_cast<size_t>(nc)] = static_cast<T>(is);
        const int c = static_cast<int>(nc % C);
        const T g = (*gamma.data)[static_cast<size_t>(c)];
        const T be = (*beta.data)[static_cast<size_t>(c)];
        T* xh = xhat->data() + nc * plane;
        T* dst = out.ptr() + nc * plane;
        for (int64_t i = 0; i < plane; ++i) {
            xh[i] = static_cast<T>((src[i] - mean) * is);
            dst[i] = g * xh[i] + be;
        }
    }

    TapeT<T>* tape = tape_of<T>({&x, &gamma, &beta});
    if (tape) {
        out.tape = tape;
        const int xn = x.tracked() ? x.node : -1;
        const int gn = gamma.tracked() ? gamma.node : -1;
        const int bn = beta.tracked() ? beta.node : -1;
        std::vector<int> parents;
        for (int id : {xn, gn, bn}) {
            if (id >= 0) parents.push_back(id);
        }
        out.node = tape->record(
            x.shape, parents,
            [gd = gamma.data, xhat, inv_sd, xn, gn, bn, N, C, plane](TapeT<T>& t, int self) {
                const std::vector<T>& gy = t.grad(self);
                for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                    const int c = static_cast<int>(nc % C);
                    const T* gyp = gy.data() + nc * plane;
                    const T* xh = xhat->data() + nc * plane;
                    if (gn >= 0) {
                        T acc{0};
                        for (int64_t i = 0; i < plane; ++i) acc += gyp[i] * xh[i];
                        t.grad(gn)[static_cast<size_t>(c)] += acc;
                    }
                    if (bn >= 0) {
                        T acc{0};
                        for (int64_t i = 0; i < plane; ++i) acc += gyp[i];
                        t.grad(bn)[static_cast<size_t>(c)] += acc;
                    }
                    if (xn >= 0) {
                        const double g = static_cast<double>((*gd)[static_cast<size_t>(c)]);
                        const double is = static_cast<double>((*inv_sd)[static_cast<size_t>(nc)]);
                        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                        for (int64_t i = 0; i < plane; ++i) {
                            const double dxh = g * gyp[i];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xh[i];
                        }
                        mean_dxhat /= static_cast<double>(plane);
                        mean_dxhat_xhat /= static_cast<double>(plane);
                        T* gx = t.grad(xn).data() + nc * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            const double dxh = g * gyp[i];
                            gx[i] += static_cast<T>(is * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat));
                        }
                    }
                }
            });
    }
    return out;
}

// ---- Adam ----

template <typename T>
ParamT<T> ParamT<T>::zeros(std::string name, Shape shape) {
    ParamT<T> p;
    p.name = std::move(name);
    p.shape = shape;
    p.value = std::make_shared<std::vector<T>>(static_cast<size_t>(shape.numel()), T{0});
    p.grad.assign(static_cast<size_t>(shape.numel()), T{0});
    return p;
}

template <typename T>
void ParamT<T>::zero_grad() {
    std::fill(grad.begin(), grad.end(), T{0});
}

template <typename T>
void adam_step(std::vector<ParamT<T>*>& params, AdamStateT<T>& state, double lr) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t p = 0; p < params.size(); ++p) {
            state.m[p].assign(params[p]->value->size(), T{0});
            state.v[p].assign(params[p]->value->size(), T{0});
        }
    }
    if (state.m.size() != params.size()) {
        throw UsageError("adam_step: state was initialized for a different parameter group");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t p = 0; p < params.size(); ++p) {
        ParamT<T>& param = *params[p];
        if (param.grad.size() != param.value->size() || state.m[p].size() != param.grad.size()) {
            throw UsageError("adam_step: gradient/state shape mismatch for " + param.name);
        }
        for (size_t i = 0; i < param.grad.size(); ++i) {
            const double g = static_cast<double>(param.grad[i]);
            const double m = state.beta1 * state.m[p][i] + (1.0 - state.beta1) * g;
            const double v = state.beta2 * state.v[p][i] + (1.0 - state.beta2) * g * g;
            state.m[p][i] = static_cast<T>(m);
            state.v[p][i] = static_cast<T>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            (*param.value)[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

// ---- gradient checking ----

double grad_check(
    const std::function<TensorT<double>(TapeT<double>&, std::vector<TensorT<double>>&)>& fn,
    const std::vector<TensorT<double>>& inputs, double h) {
    // Analytic gradients.
    TapeT<double> tape;
    std::vector<TensorT<double>> tracked;
    tracked.reserve(inputs.size());
    for (const auto& in : inputs) {
        TensorT<double> copy = make_tensor<double>(in.shape, *in.data);
        tracked.push_back(tape.leaf(copy));
    }
    TensorT<double> loss = fn(tape, tracked);
    if (loss.numel() != 1) throw UsageError("grad_check: fn must return a scalar");
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& tr : tracked) analytic.push_back(tape.grad(tr.node));

    // Central finite differences on untracked evaluations.
    auto eval = [&](const std::vector<TensorT<double>>& xs) {
        TapeT<double> scratch;
        std::vector<TensorT<double>> consts;
        consts.reserve(xs.size());
        for (const auto& x : xs) consts.push_back(x);
        return static_cast<double>(fn(scratch, consts).scalar());
    };

    double max_rel = 0.0;
    std::vector<TensorT<double>> work;
    work.reserve(inputs.size());
    for (const auto& in : inputs) work.push_back(make_tensor<double>(in.shape, *in.data));
    for (size_t p = 0; p < work.size(); ++p) {
        for (size_t i = 0; i < work[p].data->size(); ++i) {
            const double x0 = (*work[p].data)[i];
            (*work[p].data)[i] = x0 + h;
            const double fp = eval(work);
            (*work[p].data)[i] = x0 - h;
            const double fm = eval(work);
            (*work[p].data)[i] = x0;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[p][i];
            const double denom = std::max({std::abs(an), std::abs(fd), 1e-2});
            max_rel = std::max(max_rel, std::abs(an - fd) / denom);
        }
    }
    return max_rel;
}

// ---- explicit instantiations ----

#define INSPEX_INSTANTIATE(T)                                                                        \
    template TensorT<T> make_tensor<T>(Shape, T);                                                    \
    template TensorT<T> make_tensor<T>(Shape, std::vector<T>);                                       \
    template class TapeT<T>;                                                                         \
    template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int, int);\
    template TensorT<T> conv_transpose2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                            int, int, int);                                          \
    template TensorT<T> instance_norm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);   \
    template TensorT<T> relu<T>(const TensorT<T>&);                                                  \
    template TensorT<T> leaky_relu<T>(const TensorT<T>&, double);                                    \
    template TensorT<T> tanh_op<T>(const TensorT<T>&);                                               \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                                \
    template TensorT<T> mul_scalar<T>(const TensorT<T>&, double);                                    \
    template TensorT<T> l1_loss<T>(const TensorT<T>&, const TensorT<T>&);                            \
    template TensorT<T> mse_loss<T>(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> reflection_pad<T>(const TensorT<T>&, int);                                   \
    template struct ParamT<T>;                                                                       \
    template void adam_step<T>(std::vector<ParamT<T>*>&, AdamStateT<T>&, double);

INSPEX_INSTANTIATE(float)
INSPEX_INSTANTIATE(double)

#undef INSPEX_INSTANTIATE

} // namespace inspex::ad
