#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "medkco/errors.hpp"
#include "medkco/matrix.hpp"

namespace medkco {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    std::size_t rows() const { return value().rows; }
    std::size_t cols() const { return value().cols; }
};

// Reverse-mode tape over a closed primitive set (matmul, add, elementwise
// relu/exp/log, row normalize, row softmax, reductions, reshapes). Nodes are
// appended in topological order, so walking the node list backwards visits
// every node after all of its consumers. One backward pass per tape;
// adjoints of nodes the output does not depend on stay zero.
class Tape {
public:
    Var leaf(Matrix value) { return push(std::move(value), true, {}); }
    Var constant(Matrix value) { return push(std::move(value), false, {}); }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }

    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    // Gradient of the backward() output with respect to node v. Zero for
    // nodes untouched by the backward sweep.
    const Matrix& grad(Var v) const {
        if (!backward_done_) throw contract_error("grad: backward() has not run");
        return adjoints_[v.id];
    }

    void backward(Var output) {
        if (backward_done_) throw contract_error("backward: tape already swept");
        const Matrix& out = value(output);
        if (out.rows != 1 || out.cols != 1) {
            throw contract_error("backward: output must be scalar, got " +
                                 out.shape_str());
        }
        adjoints_.clear();
        adjoints_.reserve(nodes_.size());
        for (const auto& n : nodes_) adjoints_.emplace_back(n.value.rows, n.value.cols);
        touched_.assign(nodes_.size(), false);
        adjoints_[output.id].at(0, 0) = 1.0;
        touched_[output.id] = true;
        backward_done_ = true;
        for (std::size_t i = output.id + 1; i-- > 0;) {
            if (!touched_[i] || !nodes_[i].requires_grad) continue;
            if (nodes_[i].backward_fn) nodes_[i].backward_fn(*this, adjoints_[i]);
        }
    }

    void accumulate(std::size_t node_id, const Matrix& delta) {
        Matrix& adj = adjoints_[node_id];
        for (std::size_t i = 0; i < adj.size(); ++i) adj.data[i] += delta.data[i];
        touched_[node_id] = true;
    }

    std::size_t node_count() const { return nodes_.size(); }

    using BackwardFn = std::function<void(Tape&, const Matrix& adj)>;

    Var record(Matrix value, const std::vector<Var>& parents, BackwardFn fn) {
        bool needs = false;
        for (const Var& p : parents) {
            if (p.tape != this) throw contract_error("op mixes nodes from different tapes");
            needs = needs || nodes_[p.id].requires_grad;
        }
        return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    }

private:
    struct Node {
        Matrix value;
        bool requires_grad = false;
        BackwardFn backward_fn;
    };

    Var push(Matrix value, bool requires_grad, BackwardFn fn) {
        nodes_.push_back(Node{std::move(value), requires_grad, std::move(fn)});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    std::vector<Matrix> adjoints_;
    std::vector<bool> touched_;
    bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

// ---- primitive operations ------------------------------------------------

inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    Matrix out = matmul(a.value(), b.value());
    return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& adj) {
        if (tp.requires_grad(a)) tp.accumulate(a.id, matmul(adj, transpose(b.value())));
        if (tp.requires_grad(b)) tp.accumulate(b.id, matmul(transpose(a.value()), adj));
    });
}

inline Var transpose(Var a) {
    Tape& t = *a.tape;
    return t.record(transpose(a.value()), {a}, [a](Tape& tp, const Matrix& adj) {
        tp.accumulate(a.id, transpose(adj));
    });
}

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    return t.record(add(a.value(), b.value()), {a, b},
                    [a, b](Tape& tp, const Matrix& adj) {
                        if (tp.requires_grad(a)) tp.accumulate(a.id, adj);
                        if (tp.requires_grad(b)) tp.accumulate(b.id, adj);
                    });
}

inline Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    return t.record(sub(a.value(), b.value()), {a, b},
                    [a, b](Tape& tp, const Matrix& adj) {
                        if (tp.requires_grad(a)) tp.accumulate(a.id, adj);
                        if (tp.requires_grad(b)) tp.accumulate(b.id, scale(adj, -1.0));
                    });
}

inline Var hadamard(Var a, Var b) {
    Tape& t = *a.tape;
    return t.record(hadamard(a.value(), b.value()), {a, b},
                    [a, b](Tape& tp, const Matrix& adj) {
                        if (tp.requires_grad(a)) tp.accumulate(a.id, hadamard(adj, b.value()));
                        if (tp.requires_grad(b)) tp.accumulate(b.id, hadamard(adj, a.value()));
                    });
}

inline Var scale(Var a, double c) {
    Tape& t = *a.tape;
    return t.record(scale(a.value(), c), {a}, [a, c](Tape& tp, const Matrix& adj) {
        tp.accumulate(a.id, scale(adj, c));
    });
}

// Adds a 1xC row vector to every row of a BxC matrix (bias broadcast).
inline Var add_row(Var a, Var row) {
    Tape& t = *a.tape;
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (rv.rows != 1 || rv.cols != av.cols) {
        throw shape_error("add_row: expected 1x" + std::to_string(av.cols) +
                          " bias, got " + rv.shape_str());
    }
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out.at(i, j) += rv.at(0, j);
    return t.record(std::move(out), {a, row}, [a, row](Tape& tp, const Matrix& adj) {
        if (tp.requires_grad(a)) tp.accumulate(a.id, adj);
        if (tp.requires_grad(row)) {
            Matrix g(1, adj.cols);
            for (std::size_t i = 0; i < adj.rows; ++i)
                for (std::size_t j = 0; j < adj.cols; ++j) g.at(0, j) += adj.at(i, j);
            tp.accumulate(row.id, g);
        }
    });
}

inline Var relu(Var a) {
    Tape& t = *a.tape;
    Matrix out = a.value();
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& adj) {
        Matrix g = adj;
        const Matrix& av = a.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av.data[i] <= 0.0) g.data[i] = 0.0;
        tp.accumulate(a.id, g);
    });
}

inline Var exp(Var a) {
    Tape& t = *a.tape;
    Matrix out = a.value();
    for (double& v : out.data) v = std::exp(v);
    return t.record(std::move(out), {a}, [a, id = t.node_count()](Tape& tp, const Matrix& adj) {
        Matrix g = adj;
        const Matrix& ov = tp.value(Var{&tp, id});
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= ov.data[i];
        tp.accumulate(a.id, g);
    });
}

inline Var log(Var a) {
    Tape& t = *a.tape;
    Matrix out = a.value();
    for (double& v : out.data) v = std::log(v);
    return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& adj) {
        Matrix g = adj;
        const Matrix& av = a.value();
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] /= av.data[i];
        tp.accumulate(a.id, g);
    });
}

inline Var row_l2_normalize(Var a, double epsilon = 1e-8) {
    Tape& t = *a.tape;
    return t.record(row_l2_normalize(a.value(), epsilon), {a},
                    [a, epsilon](Tape& tp, const Matrix& adj) {
                        const Matrix& x = a.value();
                        Matrix g(x.rows, x.cols);
                        for (std::size_t i = 0; i < x.rows; ++i) {
                            const double n = row_norm(x, i);
                            if (n >= epsilon) {
                                double dot = 0.0;  // adj . y with y = x / n
                                for (std::size_t j = 0; j < x.cols; ++j)
                                    dot += adj.at(i, j) * x.at(i, j) / n;
                                for (std::size_t j = 0; j < x.cols; ++j)
                                    g.at(i, j) = (adj.at(i, j) - dot * x.at(i, j) / n) / n;
                            } else {
                                for (std::size_t j = 0; j < x.cols; ++j)
                                    g.at(i, j) = adj.at(i, j) / epsilon;
                            }
                        }
                        tp.accumulate(a.id, g);
                    });
}

// Numerically stable softmax over each row (max-subtracted).
inline Var row_softmax(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, x.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            out.at(i, j) = std::exp(x.at(i, j) - mx);
            sum += out.at(i, j);
        }
        for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) /= sum;
    }
    return t.record(std::move(out), {a}, [a, id = t.node_count()](Tape& tp, const Matrix& adj) {
        const Matrix& p = tp.value(Var{&tp, id});
        Matrix g(p.rows, p.cols);
        for (std::size_t i = 0; i < p.rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < p.cols; ++j) dot += adj.at(i, j) * p.at(i, j);
            for (std::size_t j = 0; j < p.cols; ++j)
                g.at(i, j) = p.at(i, j) * (adj.at(i, j) - dot);
        }
        tp.accumulate(a.id, g);
    });
}

// Max over each row, Bx1 output. Gradient routes to the first maximal entry.
inline Var row_max(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    if (x.cols == 0) throw contract_error("row_max: empty rows");
    Matrix out(x.rows, 1);
    std::vector<std::size_t> argmax(x.rows, 0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < x.cols; ++j) {
            if (x.at(i, j) > mx) {
                mx = x.at(i, j);
                argmax[i] = j;
            }
        }
        out.at(i, 0) = mx;
    }
    return t.record(std::move(out), {a},
                    [a, argmax = std::move(argmax)](Tape& tp, const Matrix& adj) {
                        const Matrix& x = a.value();
                        Matrix g(x.rows, x.cols);
                        for (std::size_t i = 0; i < x.rows; ++i)
                            g.at(i, argmax[i]) = adj.at(i, 0);
                        tp.accumulate(a.id, g);
                    });
}

// Diagonal of a square matrix as an Nx1 column.
inline Var diag(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    if (x.rows != x.cols) throw shape_error("diag: matrix is " + x.shape_str());
    Matrix out(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i) out.at(i, 0) = x.at(i, i);
    return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& adj) {
        const Matrix& x = a.value();
        Matrix g(x.rows, x.cols);
        for (std::size_t i = 0; i < x.rows; ++i) g.at(i, i) = adj.at(i, 0);
        tp.accumulate(a.id, g);
    });
}

inline Var sum(Var a) {
    Tape& t = *a.tape;
    double s = 0.0;
    for (double v : a.value().data) s += v;
    return t.record(Matrix(1, 1, {s}), {a}, [a](Tape& tp, const Matrix& adj) {
        const Matrix& x = a.value();
        tp.accumulate(a.id, Matrix(x.rows, x.cols, adj.at(0, 0)));
    });
}

inline Var mean(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    if (x.size() == 0) throw contract_error("mean: empty matrix");
    double s = 0.0;
    for (double v : x.data) s += v;
    const double n = static_cast<double>(x.size());
    return t.record(Matrix(1, 1, {s / n}), {a}, [a, n](Tape& tp, const Matrix& adj) {
        const Matrix& x = a.value();
        tp.accumulate(a.id, Matrix(x.rows, x.cols, adj.at(0, 0) / n));
    });
}

// Mean over consecutive groups of `group` rows: (B*group)xC -> BxC.
inline Var mean_pool_rows(Var a, std::size_t group) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    if (group == 0 || x.rows % group != 0) {
        throw shape_error("mean_pool_rows: " + std::to_string(x.rows) +
                          " rows not divisible into groups of " + std::to_string(group));
    }
    Matrix out(x.rows / group, x.cols);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t g = 0; g < group; ++g)
            for (std::size_t j = 0; j < x.cols; ++j)
                out.at(i, j) += x.at(i * group + g, j) / static_cast<double>(group);
    return t.record(std::move(out), {a}, [a, group](Tape& tp, const Matrix& adj) {
        const Matrix& x = a.value();
        Matrix g(x.rows, x.cols);
        for (std::size_t i = 0; i < adj.rows; ++i)
            for (std::size_t k = 0; k < group; ++k)
                for (std::size_t j = 0; j < x.cols; ++j)
                    g.at(i * group + k, j) = adj.at(i, j) / static_cast<double>(group);
        tp.accumulate(a.id, g);
    });
}

// Multiply every entry by a 1x1 scalar node.
inline Var scale_by(Var a, Var scalar) {
    Tape& t = *a.tape;
    const Matrix& s = scalar.value();
    if (s.rows != 1 || s.cols != 1)
        throw shape_error("scale_by: scalar operand is " + s.shape_str());
    return t.record(scale(a.value(), s.at(0, 0)), {a, scalar},
                    [a, scalar](Tape& tp, const Matrix& adj) {
                        if (tp.requires_grad(a))
                            tp.accumulate(a.id, scale(adj, scalar.value().at(0, 0)));
                        if (tp.requires_grad(scalar)) {
                            double dot = 0.0;
                            const Matrix& av = a.value();
                            for (std::size_t i = 0; i < adj.size(); ++i)
                                dot += adj.data[i] * av.data[i];
                            tp.accumulate(scalar.id, Matrix(1, 1, {dot}));
                        }
                    });
}

// Contiguous row slice [start, start+count).
inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    if (start + count > x.rows) {
        throw shape_error("slice_rows: [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") out of " +
                          std::to_string(x.rows) + " rows");
    }
    Matrix out(count, x.cols);
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out.at(i, j) = x.at(start + i, j);
    return t.record(std::move(out), {a}, [a, start, count](Tape& tp, const Matrix& adj) {
        const Matrix& x = a.value();
        Matrix g(x.rows, x.cols);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < x.cols; ++j) g.at(start + i, j) = adj.at(i, j);
        tp.accumulate(a.id, g);
    });
}

// Row-major reinterpretation to a new column count.
inline Var reshape_rows(Var a, std::size_t new_cols) {
    Tape& t = *a.tape;
    const Matrix& x = a.value();
    if (new_cols == 0 || x.size() % new_cols != 0) {
        throw shape_error("reshape_rows: " + x.shape_str() + " cannot reshape to cols=" +
                          std::to_string(new_cols));
    }
    Matrix out(x.size() / new_cols, new_cols, x.data);
    return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& adj) {
        const Matrix& x = a.value();
        tp.accumulate(a.id, Matrix(x.rows, x.cols, adj.data));
    });
}

// Builds an RxC matrix out of R*C scalar nodes in row-major order.
inline Var assemble(Tape& t, std::size_t rows, std::size_t cols,
                    const std::vector<Var>& scalars) {
    if (scalars.size() != rows * cols) {
        throw shape_error("assemble: expected " + std::to_string(rows * cols) +
                          " scalars, got " + std::to_string(scalars.size()));
    }
    Matrix out(rows, cols);
    for (std::size_t idx = 0; idx < scalars.size(); ++idx) {
        const Matrix& s = scalars[idx].value();
        if (s.rows != 1 || s.cols != 1) {
            throw shape_error("assemble: element " + std::to_string(idx) +
                              " is not scalar (" + s.shape_str() + ")");
        }
        out.data[idx] = s.at(0, 0);
    }
    return t.record(std::move(out), scalars, [scalars](Tape& tp, const Matrix& adj) {
        for (std::size_t idx = 0; idx < scalars.size(); ++idx) {
            if (!tp.requires_grad(scalars[idx])) continue;
            tp.accumulate(scalars[idx].id, Matrix(1, 1, {adj.data[idx]}));
        }
    });
}

// ---- finite-difference oracle ---------------------------------------------

// f builds a scalar node from leaf parameters on a fresh tape. Central
// differences (f(p+h)-f(p-h))/(2h) per coordinate are compared against
// backward(); returns the worst relative error with denominator
// max(|analytic|, |numeric|, 1e-12).
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double finite_diff_check(const ScalarFn& f, std::vector<Matrix> params,
                                double step) {
    if (step <= 0.0) throw contract_error("finite_diff_check: step must be positive");

    auto eval = [&](const std::vector<Matrix>& ps) {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(ps.size());
        for (const Matrix& p : ps) leaves.push_back(tape.leaf(p));
        Var out = f(tape, leaves);
        const Matrix& v = out.value();
        if (v.rows != 1 || v.cols != 1) {
            throw contract_error("finite_diff_check: f must return a scalar");
        }
        const double y = v.at(0, 0);
        if (!std::isfinite(y)) throw numeric_error("finite_diff_check: non-finite f value");
        return y;
    };

    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
    Var out = f(tape, leaves);
    tape.backward(out);

    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const Matrix analytic = tape.grad(leaves[p]);
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double orig = params[p].data[i];
            params[p].data[i] = orig + step;
            const double fp = eval(params);
            params[p].data[i] = orig - step;
            const double fm = eval(params);
            params[p].data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic.data[i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
            worst = std::max(worst, std::fabs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace medkco
