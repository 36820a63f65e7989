#pragma once

// The twin classifier: input -> sigmoid hidden layer (dim 128 by default) ->
// linear output normalized to class probabilities, trained with mean
// cross-entropy. Differentiation is hand-rolled: exact analytic gradients
// via backpropagation, and exact Hessian-vector products via Pearlmutter's
// R-operator (needed when differentiating through inner-loop steps).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "twinkit/common.hpp"

namespace twinkit::meta {

// One set of network parameters, also used for gradients, optimizer moments
// and tangent vectors.
struct ParamBlock {
    std::vector<double> w1;  // hidden x input, row-major
    std::vector<double> b1;  // hidden
    std::vector<double> w2;  // output x hidden, row-major
    std::vector<double> b2;  // output

    static ParamBlock shaped(int input, int hidden, int output) {
        ParamBlock p;
        p.w1.assign(static_cast<size_t>(hidden) * input, 0.0);
        p.b1.assign(hidden, 0.0);
        p.w2.assign(static_cast<size_t>(output) * hidden, 0.0);
        p.b2.assign(output, 0.0);
        return p;
    }

    size_t flat_size() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

    double& flat(size_t i) {
        if (i < w1.size()) return w1[i];
        i -= w1.size();
        if (i < b1.size()) return b1[i];
        i -= b1.size();
        if (i < w2.size()) return w2[i];
        i -= w2.size();
        return b2[i];
    }
    double flat(size_t i) const { return const_cast<ParamBlock*>(this)->flat(i); }

    void fill(double v) {
        std::fill(w1.begin(), w1.end(), v);
        std::fill(b1.begin(), b1.end(), v);
        std::fill(w2.begin(), w2.end(), v);
        std::fill(b2.begin(), b2.end(), v);
    }

    void add_scaled(const ParamBlock& o, double s) {
        for (size_t i = 0; i < w1.size(); ++i) w1[i] += s * o.w1[i];
        for (size_t i = 0; i < b1.size(); ++i) b1[i] += s * o.b1[i];
        for (size_t i = 0; i < w2.size(); ++i) w2[i] += s * o.w2[i];
        for (size_t i = 0; i < b2.size(); ++i) b2[i] += s * o.b2[i];
    }

    void scale(double s) {
        for (auto& v : w1) v *= s;
        for (auto& v : b1) v *= s;
        for (auto& v : w2) v *= s;
        for (auto& v : b2) v *= s;
    }

    bool finite() const {
        for (size_t i = 0; i < flat_size(); ++i)
            if (!std::isfinite(flat(i))) return false;
        return true;
    }
};

struct MlpModel {
    int input_dim = 0;
    int hidden_dim = 0;
    int output_dim = 0;
    ParamBlock params;
    std::vector<std::string> feature_order;  // named inputs, in order
    std::vector<int> label_codes;            // class index -> status code
    std::string activation = "sigmoid";
};

struct Batch {
    std::vector<const double*> rows;
    std::vector<int> labels;

    size_t size() const { return rows.size(); }
    bool empty() const { return rows.empty(); }
};

// Symmetric-uniform fan-based initialization, biases zero. Deterministic per
// seed: w1 is filled before w2, in row-major order.
inline MlpModel init_model(int n_features, int n_classes, int hidden_dim, uint64_t seed) {
    if (n_features < 1) throw ModelError("model: need at least one feature");
    if (n_classes < 2) throw ModelError("model: need at least two classes");
    MlpModel m;
    m.input_dim = n_features;
    m.hidden_dim = hidden_dim;
    m.output_dim = n_classes;
    m.params = ParamBlock::shaped(n_features, hidden_dim, n_classes);
    Rng rng(derive_seed(seed, "init"));
    double l1 = std::sqrt(6.0 / (n_features + hidden_dim));
    for (auto& w : m.params.w1) w = rng.uniform(-l1, l1);
    double l2 = std::sqrt(6.0 / (hidden_dim + n_classes));
    for (auto& w : m.params.w2) w = rng.uniform(-l2, l2);
    return m;
}

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Forward pass through given parameters; fills hidden activations and output
// probabilities (softmax with max subtraction).
inline void forward_pass(const ParamBlock& p, int in, int hid, int out, const double* x,
                         double* h, double* prob) {
    for (int j = 0; j < hid; ++j) {
        double z = p.b1[j];
        const double* wrow = &p.w1[static_cast<size_t>(j) * in];
        for (int i = 0; i < in; ++i) z += wrow[i] * x[i];
        h[j] = sigmoid(z);
    }
    double zmax = -1e300;
    for (int k = 0; k < out; ++k) {
        double z = p.b2[k];
        const double* wrow = &p.w2[static_cast<size_t>(k) * hid];
        for (int j = 0; j < hid; ++j) z += wrow[j] * h[j];
        prob[k] = z;
        if (z > zmax) zmax = z;
    }
    double sum = 0.0;
    for (int k = 0; k < out; ++k) {
        prob[k] = std::exp(prob[k] - zmax);
        sum += prob[k];
    }
    for (int k = 0; k < out; ++k) prob[k] /= sum;
}

}  // namespace detail

inline std::vector<double> forward(const MlpModel& m, const double* x) {
    std::vector<double> h(m.hidden_dim), prob(m.output_dim);
    detail::forward_pass(m.params, m.input_dim, m.hidden_dim, m.output_dim, x, h.data(),
                         prob.data());
    return prob;
}

inline std::vector<double> forward(const MlpModel& m, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != m.input_dim)
        throw ModelError("model: input width " + std::to_string(x.size()) + " != " +
                         std::to_string(m.input_dim));
    return forward(m, x.data());
}

inline int predict_class(const MlpModel& m, const std::vector<double>& x) {
    auto p = forward(m, x);
    int best = 0;
    for (int k = 1; k < m.output_dim; ++k)
        if (p[k] > p[best]) best = k;
    return best;
}

// Mean cross-entropy over the batch; exact analytic gradients when `grads`
// is non-null (must be shaped like the parameters, is overwritten).
inline double loss_and_grads(const ParamBlock& p, int in, int hid, int out, const Batch& batch,
                             ParamBlock* grads) {
    if (batch.empty()) throw ModelError("model: empty batch");
    for (int y : batch.labels)
        if (y < 0 || y >= out)
            throw ModelError("model: label " + std::to_string(y) + " outside the " +
                             std::to_string(out) + "-class output");
    if (grads) grads->fill(0.0);
    std::vector<double> h(hid), prob(out), d2(out), dh(hid), d1(hid);
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (size_t s = 0; s < batch.size(); ++s) {
        const double* x = batch.rows[s];
        int y = batch.labels[s];
        detail::forward_pass(p, in, hid, out, x, h.data(), prob.data());
        loss -= std::log(std::max(prob[y], 1e-300)) * inv_n;
        if (!grads) continue;

        for (int k = 0; k < out; ++k) d2[k] = (prob[k] - (k == y ? 1.0 : 0.0)) * inv_n;
        for (int k = 0; k < out; ++k) {
            double* gw = &grads->w2[static_cast<size_t>(k) * hid];
            for (int j = 0; j < hid; ++j) gw[j] += d2[k] * h[j];
            grads->b2[k] += d2[k];
        }
        for (int j = 0; j < hid; ++j) {
            double acc = 0.0;
            for (int k = 0; k < out; ++k) acc += p.w2[static_cast<size_t>(k) * hid + j] * d2[k];
            dh[j] = acc;
            d1[j] = acc * h[j] * (1.0 - h[j]);
        }
        for (int j = 0; j < hid; ++j) {
            double* gw = &grads->w1[static_cast<size_t>(j) * in];
            for (int i = 0; i < in; ++i) gw[i] += d1[j] * x[i];
            grads->b1[j] += d1[j];
        }
    }
    return loss;
}

inline double loss_and_grads(const MlpModel& m, const Batch& batch, ParamBlock* grads) {
    return loss_and_grads(m.params, m.input_dim, m.hidden_dim, m.output_dim, batch, grads);
}

inline double batch_accuracy(const ParamBlock& p, int in, int hid, int out, const Batch& batch) {
    if (batch.empty()) return 0.0;
    std::vector<double> h(hid), prob(out);
    size_t correct = 0;
    for (size_t s = 0; s < batch.size(); ++s) {
        detail::forward_pass(p, in, hid, out, batch.rows[s], h.data(), prob.data());
        int best = 0;
        for (int k = 1; k < out; ++k)
            if (prob[k] > prob[best]) best = k;
        if (best == batch.labels[s]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Exact Hessian-vector product of the mean cross-entropy loss, via the
// R-operator: a forward tangent sweep followed by a tangent backward sweep.
// hvp = H(p) * v where H is the Hessian of the loss at parameters p.
// ---------------------------------------------------------------------------

inline double loss_grads_hvp(const ParamBlock& p, int in, int hid, int out, const Batch& batch,
                             const ParamBlock& v, ParamBlock* grads, ParamBlock* hvp) {
    if (batch.empty()) throw ModelError("model: empty batch");
    for (int y : batch.labels)
        if (y < 0 || y >= out)
            throw ModelError("model: label " + std::to_string(y) + " outside the " +
                             std::to_string(out) + "-class output");
    if (grads) grads->fill(0.0);
    hvp->fill(0.0);
    std::vector<double> h(hid), prob(out);
    std::vector<double> rz1(hid), rh(hid), rz2(out), rp(out);
    std::vector<double> d2(out), rd2(out), dh(hid), rdh(hid), d1(hid), rd1(hid);
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    for (size_t s = 0; s < batch.size(); ++s) {
        const double* x = batch.rows[s];
        int y = batch.labels[s];
        detail::forward_pass(p, in, hid, out, x, h.data(), prob.data());
        loss -= std::log(std::max(prob[y], 1e-300)) * inv_n;

        // forward tangents
        for (int j = 0; j < hid; ++j) {
            double rz = v.b1[j];
            const double* vw = &v.w1[static_cast<size_t>(j) * in];
            for (int i = 0; i < in; ++i) rz += vw[i] * x[i];
            rz1[j] = rz;
            rh[j] = h[j] * (1.0 - h[j]) * rz;
        }
        double dot = 0.0;
        for (int k = 0; k < out; ++k) {
            double rz = v.b2[k];
            const double* vw = &v.w2[static_cast<size_t>(k) * hid];
            const double* pw = &p.w2[static_cast<size_t>(k) * hid];
            for (int j = 0; j < hid; ++j) rz += vw[j] * h[j] + pw[j] * rh[j];
            rz2[k] = rz;
            dot += prob[k] * rz;
        }
        for (int k = 0; k < out; ++k) rp[k] = prob[k] * (rz2[k] - dot);

        // backward values and tangents
        for (int k = 0; k < out; ++k) {
            d2[k] = (prob[k] - (k == y ? 1.0 : 0.0)) * inv_n;
            rd2[k] = rp[k] * inv_n;
        }
        for (int k = 0; k < out; ++k) {
            if (grads) {
                double* gw = &grads->w2[static_cast<size_t>(k) * hid];
                for (int j = 0; j < hid; ++j) gw[j] += d2[k] * h[j];
                grads->b2[k] += d2[k];
            }
            double* hw = &hvp->w2[static_cast<size_t>(k) * hid];
            for (int j = 0; j < hid; ++j) hw[j] += rd2[k] * h[j] + d2[k] * rh[j];
            hvp->b2[k] += rd2[k];
        }
        for (int j = 0; j < hid; ++j) {
            double acc = 0.0, racc = 0.0;
            for (int k = 0; k < out; ++k) {
                size_t idx = static_cast<size_t>(k) * hid + j;
                acc += p.w2[idx] * d2[k];
                racc += v.w2[idx] * d2[k] + p.w2[idx] * rd2[k];
            }
            dh[j] = acc;
            rdh[j] = racc;
            double sp = h[j] * (1.0 - h[j]);
            d1[j] = acc * sp;
            rd1[j] = racc * sp + acc * rh[j] * (1.0 - 2.0 * h[j]);
        }
        for (int j = 0; j < hid; ++j) {
            if (grads) {
                double* gw = &grads->w1[static_cast<size_t>(j) * in];
                for (int i = 0; i < in; ++i) gw[i] += d1[j] * x[i];
                grads->b1[j] += d1[j];
            }
            double* hw = &hvp->w1[static_cast<size_t>(j) * in];
            for (int i = 0; i < in; ++i) hw[i] += rd1[j] * x[i];
            hvp->b1[j] += rd1[j];
        }
    }
    return loss;
}

}  // namespace twinkit::meta
