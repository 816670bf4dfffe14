#pragma once

// Straight-line scalar transcriptions of the encoder forward pass, written without
// Eigen so they can serve as independent references in tests.

#include <cmath>
#include <vector>

#include "pathsearch/encoder.hpp"

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const pathsearch::Matrix& m) {
    Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
    return r;
}

// x * W for x: n x c, W: c x c
inline Rows times(const Rows& x, const pathsearch::Matrix& w) {
    Rows out(x.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < x[i].size(); ++k) s += x[i][k] * w(static_cast<Eigen::Index>(k), j);
            out[i][j] = s;
        }
    return out;
}

inline Rows correlate(const Rows& x, const pathsearch::CorrelationParams& p) {
    const Rows q = times(x, p.wq), k = times(x, p.wk), v = times(x, p.wv);
    const std::size_t n = x.size(), c = x[0].size();
    Rows out = x;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(n);
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            double d = 0.0;
            for (std::size_t t = 0; t < c; ++t) d += q[i][t] * k[j][t];
            s[j] = d / std::sqrt(static_cast<double>(c));
            mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t t = 0; t < c; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * v[j][t];
            out[i][t] = (p.residual ? x[i][t] : 0.0) + acc;
        }
    }
    return out;
}

struct Pooled {
    std::vector<double> pooled;
    std::vector<double> weights;
};

inline Pooled pool(const Rows& h, const pathsearch::GatedAttentionParams& p) {
    const std::size_t r = h.size(), c = h[0].size(), d = static_cast<std::size_t>(p.v1.rows());
    std::vector<double> logit(r);
    for (std::size_t n = 0; n < r; ++n) {
        double s = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            double u = 0.0, g = 0.0;
            for (std::size_t t = 0; t < c; ++t) {
                u += p.v1(a, t) * h[n][t];
                g += p.v2(a, t) * h[n][t];
            }
            s += p.w(a) * std::tanh(u) * (1.0 / (1.0 + std::exp(-g)));
        }
        logit[n] = s;
    }
    double mx = -1e300;
    for (double l : logit) mx = std::max(mx, l);
    double z = 0.0;
    for (double l : logit) z += std::exp(l - mx);
    Pooled out{std::vector<double>(c, 0.0), std::vector<double>(r)};
    for (std::size_t n = 0; n < r; ++n) {
        out.weights[n] = std::exp(logit[n] - mx) / z;
        for (std::size_t t = 0; t < c; ++t) out.pooled[t] += out.weights[n] * h[n][t];
    }
    return out;
}

struct Forward {
    Rows mosaics;
    std::vector<double> semantic;
};

inline Forward encode(const pathsearch::Matrix& patches, const pathsearch::EncoderModel& model) {
    const Rows x = correlate(to_rows(patches), model.correlation);
    Forward f;
    for (const auto& b : model.branches) f.mosaics.push_back(pool(x, b).pooled);
    std::vector<double> agg = pool(f.mosaics, model.aggregator).pooled;
    if (model.projection) {
        std::vector<double> y(agg.size(), 0.0);
        for (std::size_t i = 0; i < agg.size(); ++i)
            for (std::size_t j = 0; j < agg.size(); ++j) y[i] += (*model.projection)(i, j) * agg[j];
        agg = y;
    }
    double nrm = 0.0;
    for (double v : agg) nrm += v * v;
    nrm = std::sqrt(nrm);
    for (double& v : agg) v /= nrm;
    f.semantic = agg;
    return f;
}

}  // namespace oracle
