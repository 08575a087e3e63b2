#include "gatelab/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gatelab {

namespace {

// C += A(m,k) * B(k,n), ikj order so the inner loop vectorizes.
void matmul_acc(const double* A, const double* B, double* C,
                std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C += A(m,k) * B(n,k)^T
void matmul_bt_acc(const double* A, const double* B, double* C,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* b = B + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
            C[i * n + j] += s;
        }
    }
}

// C += A(k,m)^T * B(k,n)
void matmul_at_acc(const double* A, const double* B, double* C,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* a = A + p * m;
        const double* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[i];
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(op) + ": rank-2 tensor required, got " + shape_string(t));
}

} // namespace

int Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_of(int id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_alloc = true;
    }
    return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor& dst = grad_of(id);
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
}

void Tape::check_same_tape(Var a, Var b) const {
    if (a.tape != b.tape || a.tape != this)
        throw std::invalid_argument("op arguments belong to different tapes");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) throw std::runtime_error("non-finite value in leaf tensor");
    int id = push(std::move(value), requires_grad, {});
    return Var{this, id};
}

Var Tape::param(Parameter& p) {
    for (auto& [param, id] : registered_)
        if (param == &p) return Var{this, id};
    Var v = leaf(p.value, !p.frozen);
    if (!p.frozen) registered_.emplace_back(&p, v.id);
    return v;
}

GradientMap Tape::backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
    if (consumed_) throw std::runtime_error("backward: graph already consumed");
    if (!loss.value().is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_string(loss.value()));
    consumed_ = true;

    grad_of(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.requires_grad && n.grad_alloc && n.backprop) n.backprop(*this);
    }

    GradientMap out;
    for (auto& [param, id] : registered_) {
        Node& n = nodes_[id];
        out[param->name] = n.grad_alloc ? n.grad : Tensor::zeros(param->value.shape());
    }
    return out;
}

Var Tape::add(Var a, Var b) {
    check_same_tape(a, b);
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("add: shape mismatch " + shape_string(a.value()) + " vs " + shape_string(b.value()));
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    require_finite(out, "add");
    int ia = a.id, ib = b.id;
    int id = push(std::move(out), wants_grad(a) || wants_grad(b), [](Tape&) {});
    nodes_[id].backprop = [id, ia, ib](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    };
    return Var{this, id};
}

Var Tape::sub(Var a, Var b) {
    check_same_tape(a, b);
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("sub: shape mismatch " + shape_string(a.value()) + " vs " + shape_string(b.value()));
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    require_finite(out, "sub");
    int ia = a.id, ib = b.id;
    int id = push(std::move(out), wants_grad(a) || wants_grad(b), {});
    nodes_[id].backprop = [id, ia, ib](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        t.accumulate(ia, g);
        Tensor neg = g;
        for (auto& v : neg.vec()) v = -v;
        t.accumulate(ib, neg);
    };
    return Var{this, id};
}

Var Tape::mul(Var a, Var b) {
    check_same_tape(a, b);
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument("mul: shape mismatch " + shape_string(a.value()) + " vs " + shape_string(b.value()));
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    require_finite(out, "mul");
    int ia = a.id, ib = b.id;
    int id = push(std::move(out), wants_grad(a) || wants_grad(b), {});
    nodes_[id].backprop = [id, ia, ib](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        Tensor da = g, db = g;
        const Tensor& va = t.nodes_[ia].value;
        const Tensor& vb = t.nodes_[ib].value;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            da[i] *= vb[i];
            db[i] *= va[i];
        }
        t.accumulate(ia, da);
        t.accumulate(ib, db);
    };
    return Var{this, id};
}

Var Tape::affine(Var a, double k, double c) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = k * v + c;
    require_finite(out, "affine");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, k](Tape& t) {
        Tensor da = t.nodes_[id].grad;
        for (auto& v : da.vec()) v *= k;
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::scalar_mul(Var s, Var a) {
    check_same_tape(s, a);
    if (!s.value().is_scalar()) throw std::invalid_argument("scalar_mul: first argument must be scalar");
    const double sv = s.value().item();
    Tensor out = a.value();
    for (auto& v : out.vec()) v *= sv;
    require_finite(out, "scalar_mul");
    int is = s.id, ia = a.id;
    int id = push(std::move(out), wants_grad(s) || wants_grad(a), {});
    nodes_[id].backprop = [id, is, ia, sv](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& va = t.nodes_[ia].value;
        double ds = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) ds += g[i] * va[i];
        t.accumulate(is, Tensor::scalar(ds));
        Tensor da = g;
        for (auto& v : da.vec()) v *= sv;
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::matmul(Var a, Var b) {
    check_same_tape(a, b);
    require_rank2(a.value(), "matmul");
    require_rank2(b.value(), "matmul");
    const std::size_t m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
    if (b.value().rows() != k)
        throw std::invalid_argument("matmul: inner dimension mismatch " + shape_string(a.value()) + " x " + shape_string(b.value()));
    Tensor out({m, n});
    matmul_acc(a.value().data(), b.value().data(), out.data(), m, k, n);
    require_finite(out, "matmul");
    int ia = a.id, ib = b.id;
    int id = push(std::move(out), wants_grad(a) || wants_grad(b), {});
    nodes_[id].backprop = [id, ia, ib, m, k, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& va = t.nodes_[ia].value;
        const Tensor& vb = t.nodes_[ib].value;
        if (t.nodes_[ia].requires_grad)
            matmul_bt_acc(g.data(), vb.data(), t.grad_of(ia).data(), m, n, k);
        if (t.nodes_[ib].requires_grad)
            matmul_at_acc(va.data(), g.data(), t.grad_of(ib).data(), k, m, n);
    };
    return Var{this, id};
}

Var Tape::transpose(Var a) {
    require_rank2(a.value(), "transpose");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.value().at(i, j);
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, m, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        Tensor da({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) da.at(i, j) = g.at(j, i);
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::sigmoid(Var a) {
    Tensor out = a.value();
    for (auto& v : out.vec()) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    require_finite(out, "sigmoid");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& y = t.nodes_[id].value;
        Tensor da = g;
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] *= y[i] * (1.0 - y[i]);
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::tanh_op(Var a) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = std::tanh(v);
    require_finite(out, "tanh");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& y = t.nodes_[id].value;
        Tensor da = g;
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] *= 1.0 - y[i] * y[i];
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::exp_op(Var a) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = std::exp(v);
    require_finite(out, "exp");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& y = t.nodes_[id].value;
        Tensor da = g;
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] *= y[i];
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::log_op(Var a) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = std::log(v);
    require_finite(out, "log");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& x = t.nodes_[ia].value;
        Tensor da = g;
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] /= x[i];
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::abs_op(Var a) {
    Tensor out = a.value();
    for (auto& v : out.vec()) v = std::fabs(v);
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& x = t.nodes_[ia].value;
        Tensor da = g;
        // subgradient 0 at the kink
        for (std::size_t i = 0; i < g.numel(); ++i)
            da[i] *= (x[i] > 0.0) ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::clamp(Var a, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    Tensor out = a.value();
    for (auto& v : out.vec()) v = std::min(hi, std::max(lo, v));
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, lo, hi](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& x = t.nodes_[ia].value;
        Tensor da = g;
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (x[i] < lo || x[i] > hi) da[i] = 0.0;
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::softmax_rows(Var a) {
    require_rank2(a.value(), "softmax_rows");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    Tensor out = a.value();
    for (std::size_t i = 0; i < m; ++i) {
        double* r = out.data() + i * n;
        double mx = r[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, r[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            r[j] = std::exp(r[j] - mx);
            s += r[j];
        }
        for (std::size_t j = 0; j < n; ++j) r[j] /= s;
    }
    require_finite(out, "softmax_rows");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, m, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& y = t.nodes_[id].value;
        Tensor da({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            double gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) gy += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < n; ++j) da.at(i, j) = y.at(i, j) * (g.at(i, j) - gy);
        }
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::layer_norm_rows(Var a, double eps) {
    require_rank2(a.value(), "layer_norm_rows");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    Tensor out({m, n});
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* r = a.value().data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += r[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) = (r[j] - mu) * inv_std[i];
    }
    require_finite(out, "layer_norm_rows");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, m, n, inv_std](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& y = t.nodes_[id].value;
        Tensor da({m, n});
        const double dn = static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
            double gm = 0.0, gym = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                gm += g.at(i, j);
                gym += g.at(i, j) * y.at(i, j);
            }
            gm /= dn;
            gym /= dn;
            for (std::size_t j = 0; j < n; ++j)
                da.at(i, j) = inv_std[i] * (g.at(i, j) - gm - y.at(i, j) * gym);
        }
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::sum(Var a) {
    double s = 0.0;
    for (double v : a.value().vec()) s += v;
    Tensor out = Tensor::scalar(s);
    require_finite(out, "sum");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia](Tape& t) {
        const double g0 = t.nodes_[id].grad[0];
        Tensor da = Tensor::full(t.nodes_[ia].value.shape(), g0);
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::mean(Var a) {
    const double n = static_cast<double>(a.value().numel());
    return affine(sum(a), 1.0 / n, 0.0);
}

Var Tape::dot(Var a, Var b) {
    check_same_tape(a, b);
    if (a.value().numel() != b.value().numel())
        throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.value().numel(); ++i) s += a.value()[i] * b.value()[i];
    Tensor out = Tensor::scalar(s);
    require_finite(out, "dot");
    int ia = a.id, ib = b.id;
    int id = push(std::move(out), wants_grad(a) || wants_grad(b), {});
    nodes_[id].backprop = [id, ia, ib](Tape& t) {
        const double g0 = t.nodes_[id].grad[0];
        Tensor da = t.nodes_[ib].value;
        for (auto& v : da.vec()) v *= g0;
        t.accumulate(ia, da);
        Tensor db = t.nodes_[ia].value;
        for (auto& v : db.vec()) v *= g0;
        t.accumulate(ib, db);
    };
    return Var{this, id};
}

Var Tape::l2_norm_sq(Var a) { return dot(a, a); }

Var Tape::l2_norm(Var a) {
    double s = 0.0;
    for (double v : a.value().vec()) s += v * v;
    double n = std::sqrt(s);
    Tensor out = Tensor::scalar(n);
    require_finite(out, "l2_norm");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, n](Tape& t) {
        if (n == 0.0) return; // subgradient 0 at the origin
        const double g0 = t.nodes_[id].grad[0];
        Tensor da = t.nodes_[ia].value;
        for (auto& v : da.vec()) v *= g0 / n;
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::l2_normalize(Var a) {
    double s = 0.0;
    for (double v : a.value().vec()) s += v * v;
    double n = std::sqrt(s);
    if (n == 0.0) throw std::runtime_error("l2_normalize: zero vector");
    Tensor out = a.value();
    for (auto& v : out.vec()) v /= n;
    require_finite(out, "l2_normalize");
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& y = t.nodes_[id].value;
        double yg = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) yg += y[i] * g[i];
        Tensor da = g;
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] = (g[i] - y[i] * yg) / n;
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::concat_rows(Var a, Var b) {
    check_same_tape(a, b);
    require_rank2(a.value(), "concat_rows");
    require_rank2(b.value(), "concat_rows");
    const std::size_t n = a.value().cols();
    if (b.value().cols() != n)
        throw std::invalid_argument("concat_rows: column mismatch");
    const std::size_t ma = a.value().rows(), mb = b.value().rows();
    Tensor out({ma + mb, n});
    std::copy(a.value().data(), a.value().data() + ma * n, out.data());
    std::copy(b.value().data(), b.value().data() + mb * n, out.data() + ma * n);
    int ia = a.id, ib = b.id;
    int id = push(std::move(out), wants_grad(a) || wants_grad(b), {});
    nodes_[id].backprop = [id, ia, ib, ma, mb, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        Tensor da({ma, n}), db({mb, n});
        std::copy(g.data(), g.data() + ma * n, da.data());
        std::copy(g.data() + ma * n, g.data() + (ma + mb) * n, db.data());
        t.accumulate(ia, da);
        t.accumulate(ib, db);
    };
    return Var{this, id};
}

Var Tape::slice_rows(Var a, std::size_t start, std::size_t count) {
    require_rank2(a.value(), "slice_rows");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    if (start + count > m) throw std::invalid_argument("slice_rows: out of range");
    Tensor out({count, n});
    std::copy(a.value().data() + start * n, a.value().data() + (start + count) * n, out.data());
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, start, count, m, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        Tensor da({m, n});
        std::copy(g.data(), g.data() + count * n, da.data() + start * n);
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const std::size_t m = parts[0].value().rows();
    std::size_t total = 0;
    for (auto& p : parts) {
        check_same_tape(parts[0], p);
        require_rank2(p.value(), "concat_cols");
        if (p.value().rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.value().cols();
    }
    Tensor out({m, total});
    std::size_t off = 0;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (auto& p : parts) {
        const std::size_t w = p.value().cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy(p.value().data() + i * w, p.value().data() + (i + 1) * w,
                      out.data() + i * total + off);
        off += w;
        ids.push_back(p.id);
        widths.push_back(w);
    }
    bool req = false;
    for (auto& p : parts) req = req || wants_grad(p);
    int id = push(std::move(out), req, {});
    nodes_[id].backprop = [id, ids, widths, m, total](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t w = widths[k];
            Tensor da({m, w});
            for (std::size_t i = 0; i < m; ++i)
                std::copy(g.data() + i * total + off, g.data() + i * total + off + w,
                          da.data() + i * w);
            t.accumulate(ids[k], da);
            off += w;
        }
    };
    return Var{this, id};
}

Var Tape::slice_cols(Var a, std::size_t start, std::size_t count) {
    require_rank2(a.value(), "slice_cols");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    if (start + count > n) throw std::invalid_argument("slice_cols: out of range");
    Tensor out({m, count});
    for (std::size_t i = 0; i < m; ++i)
        std::copy(a.value().data() + i * n + start, a.value().data() + i * n + start + count,
                  out.data() + i * count);
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, start, count, m, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        Tensor da({m, n});
        for (std::size_t i = 0; i < m; ++i)
            std::copy(g.data() + i * count, g.data() + (i + 1) * count,
                      da.data() + i * n + start);
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::scale_rows(Var a, Var s) {
    check_same_tape(a, s);
    require_rank2(a.value(), "scale_rows");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    if (s.value().numel() != m)
        throw std::invalid_argument("scale_rows: scale length must equal row count");
    Tensor out = a.value();
    for (std::size_t i = 0; i < m; ++i) {
        const double sv = s.value()[i];
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) *= sv;
    }
    require_finite(out, "scale_rows");
    int ia = a.id, is = s.id;
    int id = push(std::move(out), wants_grad(a) || wants_grad(s), {});
    nodes_[id].backprop = [id, ia, is, m, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& va = t.nodes_[ia].value;
        const Tensor& vs = t.nodes_[is].value;
        Tensor da({m, n});
        Tensor ds(vs.shape());
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                da.at(i, j) = g.at(i, j) * vs[i];
                acc += g.at(i, j) * va.at(i, j);
            }
            ds[i] = acc;
        }
        t.accumulate(ia, da);
        t.accumulate(is, ds);
    };
    return Var{this, id};
}

Var Tape::add_rowvec(Var a, Var v) {
    check_same_tape(a, v);
    require_rank2(a.value(), "add_rowvec");
    const std::size_t m = a.value().rows(), n = a.value().cols();
    if (v.value().numel() != n)
        throw std::invalid_argument("add_rowvec: vector length must equal column count");
    Tensor out = a.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += v.value()[j];
    require_finite(out, "add_rowvec");
    int ia = a.id, iv = v.id;
    int id = push(std::move(out), wants_grad(a) || wants_grad(v), {});
    nodes_[id].backprop = [id, ia, iv, m, n](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        t.accumulate(ia, g);
        Tensor dv(t.nodes_[iv].value.shape());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dv[j] += g.at(i, j);
        t.accumulate(iv, dv);
    };
    return Var{this, id};
}

Var Tape::select(Var a, std::size_t flat_index) {
    if (flat_index >= a.value().numel()) throw std::invalid_argument("select: index out of range");
    Tensor out = Tensor::scalar(a.value()[flat_index]);
    int ia = a.id;
    int id = push(std::move(out), wants_grad(a), {});
    nodes_[id].backprop = [id, ia, flat_index](Tape& t) {
        Tensor da(t.nodes_[ia].value.shape());
        da[flat_index] = t.nodes_[id].grad[0];
        t.accumulate(ia, da);
    };
    return Var{this, id};
}

Var Tape::stack_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("stack_scalars: empty input");
    Tensor out({xs.size()});
    std::vector<int> ids;
    bool req = false;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        check_same_tape(xs[0], xs[i]);
        if (!xs[i].value().is_scalar()) throw std::invalid_argument("stack_scalars: non-scalar input");
        out[i] = xs[i].value().item();
        ids.push_back(xs[i].id);
        req = req || wants_grad(xs[i]);
    }
    require_finite(out, "stack_scalars");
    int id = push(std::move(out), req, {});
    nodes_[id].backprop = [id, ids](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < ids.size(); ++i)
            t.accumulate(ids[i], Tensor::scalar(g[i]));
    };
    return Var{this, id};
}

} // namespace gatelab
