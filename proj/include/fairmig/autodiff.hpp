#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "fairmig/common.hpp"
#include "fairmig/error.hpp"

namespace fairmig::ad {

using fairmig::Mat;
using fairmig::SpMat;

// Handle into a Tape. Plain index; cheap to copy, invalid when default-made.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Eigen matrices. Forward values are computed eagerly
// when an op is recorded; backward() replays the tape in reverse. A tape is
// built per training step and discarded.
//
// Scalars are 1x1 matrices. Gradients are only materialized for nodes on a
// grad-requiring path, and only once backward() reaches them.
class Tape {
public:
    struct Node {
        Mat value;
        Mat grad;  // empty until touched during backward
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    int size() const { return static_cast<int>(nodes_.size()); }

    // The returned reference is invalidated by recording further ops; copy it
    // or re-fetch after the last op when holding values across tape growth.
    const Mat& value(Var v) const { return node(v).value; }

    // Gradient of the last backward() root w.r.t. v. Zero matrix if v was not
    // reached.
    Mat grad(Var v) const {
        const Node& n = node(v);
        if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    Var constant(Mat v) { return push(std::move(v), false, nullptr); }

    Var leaf(Mat v) { return push(std::move(v), true, nullptr); }

    Var matmul(Var a, Var b) {
        const Mat& A = value(a);
        const Mat& B = value(b);
        if (A.cols() != B.rows()) throw ContractError("matmul shape mismatch");
        Mat out = A * B;
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t) {
            const Mat g = t.out_grad();
            if (t.needs_grad(a)) t.accum(a, g * t.value(b).transpose());
            if (t.needs_grad(b)) t.accum(b, t.value(a).transpose() * g);
        });
    }

    // Sparse constant times dense variable. The sparse factor never receives
    // gradients (it is graph structure).
    Var spmm(std::shared_ptr<const SpMat> s, Var b) {
        const Mat& B = value(b);
        if (s->cols() != B.rows()) throw ContractError("spmm shape mismatch");
        Mat out = (*s) * B;
        return push(std::move(out), needs_grad(b), [s, b](Tape& t) {
            if (t.needs_grad(b)) t.accum(b, s->transpose() * t.out_grad());
        });
    }

    Var add(Var a, Var b) {
        check_same_shape(a, b, "add");
        Mat out = value(a) + value(b);
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t) {
            const Mat& g = t.out_grad();
            if (t.needs_grad(a)) t.accum(a, g);
            if (t.needs_grad(b)) t.accum(b, g);
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(a, b, "sub");
        Mat out = value(a) - value(b);
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t) {
            const Mat& g = t.out_grad();
            if (t.needs_grad(a)) t.accum(a, g);
            if (t.needs_grad(b)) t.accum(b, -g);
        });
    }

    // Broadcast a 1xC bias row over an NxC matrix.
    Var add_rowvec(Var a, Var bias) {
        const Mat& A = value(a);
        const Mat& B = value(bias);
        if (B.rows() != 1 || B.cols() != A.cols()) throw ContractError("add_rowvec bias shape");
        Mat out = A.rowwise() + B.row(0);
        return push(std::move(out), needs_grad(a) || needs_grad(bias), [a, bias](Tape& t) {
            const Mat& g = t.out_grad();
            if (t.needs_grad(a)) t.accum(a, g);
            if (t.needs_grad(bias)) t.accum(bias, g.colwise().sum());
        });
    }

    Var scale(Var a, double c) {
        Mat out = value(a) * c;
        return push(std::move(out), needs_grad(a), [a, c](Tape& t) {
            if (t.needs_grad(a)) t.accum(a, t.out_grad() * c);
        });
    }

    Var add_scalar(Var a, double c) {
        Mat out = value(a).array() + c;
        return push(std::move(out), needs_grad(a), [a](Tape& t) {
            if (t.needs_grad(a)) t.accum(a, t.out_grad());
        });
    }

    Var one_minus(Var a) { return add_scalar(scale(a, -1.0), 1.0); }

    Var hadamard(Var a, Var b) {
        check_same_shape(a, b, "hadamard");
        Mat out = value(a).cwiseProduct(value(b));
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t) {
            const Mat& g = t.out_grad();
            if (t.needs_grad(a)) t.accum(a, g.cwiseProduct(t.value(b)));
            if (t.needs_grad(b)) t.accum(b, g.cwiseProduct(t.value(a)));
        });
    }

    // Elementwise product with a constant matrix (per-node loss weights).
    Var cmul(Var a, const Mat& c) {
        const Mat& A = value(a);
        if (A.rows() != c.rows() || A.cols() != c.cols()) throw ContractError("cmul shape mismatch");
        Mat out = A.cwiseProduct(c);
        Mat cc = c;
        return push(std::move(out), needs_grad(a), [a, cc = std::move(cc)](Tape& t) {
            if (t.needs_grad(a)) t.accum(a, t.out_grad().cwiseProduct(cc));
        });
    }

    Var relu(Var a) {
        Mat out = value(a).cwiseMax(0.0);
        return push(std::move(out), needs_grad(a), [a](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& v = t.value(a);
            Mat g = t.out_grad();
            for (Eigen::Index j = 0; j < g.cols(); ++j)
                for (Eigen::Index i = 0; i < g.rows(); ++i)
                    if (v(i, j) <= 0.0) g(i, j) = 0.0;
            t.accum(a, g);
        });
    }

    Var sigmoid(Var a) {
        Mat out = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
        int self = size();
        return push(std::move(out), needs_grad(a), [a, self](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& s = t.nodes_[static_cast<std::size_t>(self)].value;
            t.accum(a, t.out_grad().cwiseProduct((s.array() * (1.0 - s.array())).matrix()));
        });
    }

    Var log(Var a) {
        Mat out = value(a).array().log().matrix();
        return push(std::move(out), needs_grad(a), [a](Tape& t) {
            if (t.needs_grad(a)) t.accum(a, (t.out_grad().array() / t.value(a).array()).matrix());
        });
    }

    // Saturating clamp; gradient is 1 strictly inside [lo, hi], 0 outside.
    Var clamp(Var a, double lo, double hi) {
        Mat out = value(a).cwiseMax(lo).cwiseMin(hi);
        return push(std::move(out), needs_grad(a), [a, lo, hi](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& v = t.value(a);
            Mat g = t.out_grad();
            for (Eigen::Index j = 0; j < g.cols(); ++j)
                for (Eigen::Index i = 0; i < g.rows(); ++i)
                    if (v(i, j) < lo || v(i, j) > hi) g(i, j) = 0.0;
            t.accum(a, g);
        });
    }

    Var square(Var a) {
        Mat out = value(a).array().square().matrix();
        return push(std::move(out), needs_grad(a), [a](Tape& t) {
            if (t.needs_grad(a)) t.accum(a, t.out_grad().cwiseProduct(2.0 * t.value(a)));
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw ContractError("concat_cols of nothing");
        Eigen::Index rows = value(parts[0]).rows();
        Eigen::Index cols = 0;
        bool rg = false;
        for (Var p : parts) {
            if (value(p).rows() != rows) throw ContractError("concat_cols row mismatch");
            cols += value(p).cols();
            rg = rg || needs_grad(p);
        }
        Mat out(rows, cols);
        Eigen::Index off = 0;
        for (Var p : parts) {
            out.middleCols(off, value(p).cols()) = value(p);
            off += value(p).cols();
        }
        std::vector<Var> ps = parts;
        return push(std::move(out), rg, [ps = std::move(ps)](Tape& t) {
            const Mat& g = t.out_grad();
            Eigen::Index off = 0;
            for (Var p : ps) {
                Eigen::Index c = t.value(p).cols();
                if (t.needs_grad(p)) t.accum(p, g.middleCols(off, c));
                off += c;
            }
        });
    }

    // out.row(i) = a.row(perm[i])
    Var row_permute(Var a, const std::vector<int>& perm) {
        const Mat& A = value(a);
        if (static_cast<Eigen::Index>(perm.size()) != A.rows())
            throw ContractError("row_permute size mismatch");
        Mat out(A.rows(), A.cols());
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            out.row(i) = A.row(perm[static_cast<std::size_t>(i)]);
        std::vector<int> p = perm;
        return push(std::move(out), needs_grad(a), [a, p = std::move(p)](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& g = t.out_grad();
            Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
            for (Eigen::Index i = 0; i < g.rows(); ++i)
                ga.row(p[static_cast<std::size_t>(i)]) += g.row(i);
            t.accum(a, ga);
        });
    }

    // Select rows (duplicates allowed); backward scatter-adds.
    Var gather_rows(Var a, const std::vector<int>& idx) {
        const Mat& A = value(a);
        Mat out(static_cast<Eigen::Index>(idx.size()), A.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] < 0 || idx[k] >= A.rows()) throw ContractError("gather_rows index out of range");
            out.row(static_cast<Eigen::Index>(k)) = A.row(idx[k]);
        }
        std::vector<int> ii = idx;
        return push(std::move(out), needs_grad(a), [a, ii = std::move(ii)](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& g = t.out_grad();
            Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
            for (std::size_t k = 0; k < ii.size(); ++k)
                ga.row(ii[k]) += g.row(static_cast<Eigen::Index>(k));
            t.accum(a, ga);
        });
    }

    Var drop_col(Var a, int q) {
        const Mat& A = value(a);
        if (q < 0 || q >= A.cols()) throw ContractError("drop_col index out of range");
        Mat out(A.rows(), A.cols() - 1);
        out.leftCols(q) = A.leftCols(q);
        out.rightCols(A.cols() - 1 - q) = A.rightCols(A.cols() - 1 - q);
        return push(std::move(out), needs_grad(a), [a, q](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& g = t.out_grad();
            Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
            ga.leftCols(q) = g.leftCols(q);
            ga.rightCols(ga.cols() - 1 - q) = g.rightCols(g.cols() - q);
            t.accum(a, ga);
        });
    }

    Var get_col(Var a, int q) {
        const Mat& A = value(a);
        if (q < 0 || q >= A.cols()) throw ContractError("get_col index out of range");
        Mat out = A.col(q);
        return push(std::move(out), needs_grad(a), [a, q](Tape& t) {
            if (!t.needs_grad(a)) return;
            Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
            ga.col(q) = t.out_grad();
            t.accum(a, ga);
        });
    }

    // Per-row cosine similarity of two NxD matrices -> Nx1, with the norm
    // epsilon guard cos(a,b) = a.b / (max(|a|,eps) * max(|b|,eps)).
    Var rowwise_cosine(Var a, Var b, double eps = 1e-12) {
        check_same_shape(a, b, "rowwise_cosine");
        const Mat& A = value(a);
        const Mat& B = value(b);
        Mat out(A.rows(), 1);
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            double na = std::max(A.row(i).norm(), eps);
            double nb = std::max(B.row(i).norm(), eps);
            out(i, 0) = A.row(i).dot(B.row(i)) / (na * nb);
        }
        int self = size();
        return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b, eps, self](Tape& t) {
            const Mat& A = t.value(a);
            const Mat& B = t.value(b);
            const Mat& c = t.nodes_[static_cast<std::size_t>(self)].value;
            const Mat& g = t.out_grad();
            Mat ga, gb;
            if (t.needs_grad(a)) ga = Mat::Zero(A.rows(), A.cols());
            if (t.needs_grad(b)) gb = Mat::Zero(B.rows(), B.cols());
            for (Eigen::Index i = 0; i < A.rows(); ++i) {
                const double raw_na = A.row(i).norm();
                const double raw_nb = B.row(i).norm();
                const double na = std::max(raw_na, eps);
                const double nb = std::max(raw_nb, eps);
                const double gi = g(i, 0);
                if (t.needs_grad(a)) {
                    Eigen::RowVectorXd d = B.row(i) / (na * nb);
                    if (raw_na > eps) d -= c(i, 0) * A.row(i) / (na * na);
                    ga.row(i) = gi * d;
                }
                if (t.needs_grad(b)) {
                    Eigen::RowVectorXd d = A.row(i) / (na * nb);
                    if (raw_nb > eps) d -= c(i, 0) * B.row(i) / (nb * nb);
                    gb.row(i) = gi * d;
                }
            }
            if (t.needs_grad(a)) t.accum(a, ga);
            if (t.needs_grad(b)) t.accum(b, gb);
        });
    }

    // Mean over each row -> Nx1.
    Var row_mean(Var a) {
        const Mat& A = value(a);
        if (A.cols() == 0) throw ContractError("row_mean of zero-column matrix");
        Mat out = A.rowwise().mean();
        return push(std::move(out), needs_grad(a), [a](Tape& t) {
            if (!t.needs_grad(a)) return;
            const Mat& A = t.value(a);
            const Mat& g = t.out_grad();
            t.accum(a, (g * Mat::Ones(1, A.cols())) / static_cast<double>(A.cols()));
        });
    }

    Var sum_all(Var a) {
        Mat out(1, 1);
        out(0, 0) = value(a).sum();
        return push(std::move(out), needs_grad(a), [a](Tape& t) {
            if (!t.needs_grad(a)) return;
            const double g = t.out_grad()(0, 0);
            t.accum(a, Mat::Constant(t.value(a).rows(), t.value(a).cols(), g));
        });
    }

    Var mean_all(Var a) {
        const double count = static_cast<double>(value(a).size());
        if (count == 0) throw ContractError("mean_all of empty matrix");
        return scale(sum_all(a), 1.0 / count);
    }

    // Backpropagate from a scalar root. May be called once per tape.
    void backward(Var root) {
        const Mat& r = value(root);
        if (r.rows() != 1 || r.cols() != 1) throw ContractError("backward root must be scalar");
        touch(root) = Mat::Ones(1, 1);
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.requires_grad && n.grad.size() != 0 && n.backward) n.backward(*this);
        }
    }

    bool needs_grad(Var v) const { return node(v).requires_grad; }

private:
    std::vector<Node> nodes_;
    int current_out_ = -1;  // node whose backward closure is executing

    const Node& node(Var v) const {
        if (!v.valid() || v.id >= size()) throw ContractError("invalid tape handle");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    Mat& touch(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void accum(Var v, const Mat& g) { touch(v) += g; }

    const Mat& out_grad() const { return nodes_[static_cast<std::size_t>(current_out_)].grad; }

    Var push(Mat value, bool requires_grad, std::function<void(Tape&)> bw) {
        if (!value.allFinite()) throw NumericError("non-finite value recorded on tape");
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad && bw) {
            int self = size();
            n.backward = [self, bw = std::move(bw)](Tape& t) {
                t.current_out_ = self;
                bw(t);
            };
        }
        nodes_.push_back(std::move(n));
        return Var{size() - 1};
    }

    void check_same_shape(Var a, Var b, const char* op) const {
        const Mat& A = value(a);
        const Mat& B = value(b);
        if (A.rows() != B.rows() || A.cols() != B.cols())
            throw ContractError(std::string(op) + " shape mismatch");
    }
};

// Mean binary cross-entropy of predictions p against constant targets t, both
// Nx1, with log arguments clamped to [eps, 1-eps].
inline Var bce_mean(Tape& tape, Var p, const Mat& targets, double eps = 1e-7) {
    const Mat& P = tape.value(p);
    if (P.cols() != 1 || targets.cols() != 1 || P.rows() != targets.rows())
        throw ContractError("bce_mean expects matching Nx1 inputs");
    Var cp = tape.clamp(p, eps, 1.0 - eps);
    Var pos = tape.cmul(tape.log(cp), targets);
    Var neg = tape.cmul(tape.log(tape.one_minus(cp)), Mat(Mat::Ones(targets.rows(), 1) - targets));
    return tape.scale(tape.mean_all(tape.add(pos, neg)), -1.0);
}

}  // namespace fairmig::ad
