#pragma once

// Central finite-difference reference gradients for the training objective.

#include <random>
#include <string>
#include <vector>

#include "pathsearch/encoder.hpp"
#include "pathsearch/training.hpp"

namespace gradcheck {

struct TensorError {
    std::string name;
    double relative_error;
    double analytic_norm;
};

inline pathsearch::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    pathsearch::Matrix m(r, c);
    for (auto& x : m.reshaped()) x = n(rng);
    return m;
}

/// A small instance with every trainable tensor away from its special initial value.
inline pathsearch::EncoderModel instance_model(std::size_t c, std::size_t d, std::size_t m, std::uint64_t seed) {
    pathsearch::EncoderModel model = pathsearch::init_encoder({c, d, m, true, true}, seed);
    std::mt19937_64 rng(seed ^ 0xabcdef);
    const auto ci = static_cast<Eigen::Index>(c);
    model.correlation.wq = random_matrix(ci, ci, rng, 0.4);
    model.correlation.wk = random_matrix(ci, ci, rng, 0.4);
    model.correlation.wv = random_matrix(ci, ci, rng, 0.4);
    for (auto* g : {&model.aggregator}) g->w = random_matrix(static_cast<Eigen::Index>(d), 1, rng).col(0);
    for (auto& b : model.branches) b.w = random_matrix(static_cast<Eigen::Index>(d), 1, rng).col(0);
    *model.projection = pathsearch::Matrix::Identity(ci, ci) + random_matrix(ci, ci, rng, 0.3);
    *model.text_projection = pathsearch::Matrix::Identity(ci, ci) + random_matrix(ci, ci, rng, 0.3);
    model.temperature_logit = 0.7;
    return model;
}

inline pathsearch::Batch instance_batch(std::size_t c, std::size_t b, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    pathsearch::Batch batch;
    for (std::size_t i = 0; i < b; ++i) {
        const auto n = static_cast<Eigen::Index>(3 + i);
        batch.slides.emplace_back(random_matrix(n, static_cast<Eigen::Index>(c), rng));
        batch.texts.push_back(random_matrix(static_cast<Eigen::Index>(c), 1, rng).col(0));
    }
    return batch;
}

/// Per-tensor relative error ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||).
inline std::vector<TensorError> compare(const pathsearch::Batch& batch, const pathsearch::EncoderModel& model,
                                        const pathsearch::LossOptions& options, double h = 1e-5) {
    const pathsearch::GradientResult analytic = pathsearch::gradients(batch, model, options);
    const auto grads = pathsearch::parameters(analytic.grad);
    pathsearch::EncoderModel work = model;
    auto params = pathsearch::parameters(work);
    std::vector<TensorError> out;
    for (std::size_t p = 0; p < params.size(); ++p) {
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < params[p].values.size(); ++i) {
            double& x = params[p].values[i];
            const double saved = x;
            x = saved + h;
            const double up = pathsearch::total_loss(batch, work, options).total;
            x = saved - h;
            const double down = pathsearch::total_loss(batch, work, options).total;
            x = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = grads[p].values[i];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
        out.push_back({params[p].name, std::sqrt(diff2) / denom, std::sqrt(a2)});
    }
    return out;
}

}  // namespace gradcheck
