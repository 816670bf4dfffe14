#include "pathsearch/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <utility>

namespace pathsearch {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

template <class T>
T parse_number(std::string_view key, std::string_view value, std::uint64_t offset) {
    T out{};
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw FormatError("config: bad value '" + std::string(value) + "' for " + std::string(key), offset);
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view value, std::uint64_t offset) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw FormatError("config: bad boolean '" + std::string(value) + "' for " + std::string(key), offset);
}

}  // namespace

TrainConfig parse_train_config(std::string_view text) {
    TrainConfig cfg;
    std::size_t line_no = 0;
    std::uint64_t offset = 0;  // byte offset of the current line
    const std::size_t total = text.size();
    while (!text.empty()) {
        ++line_no;
        offset = total - text.size();
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw FormatError("config line " + std::to_string(line_no) + ": expected key=value", offset);
        }
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(key, value, offset);
        else if (key == "lr") cfg.lr = parse_number<double>(key, value, offset);
        else if (key == "weight_decay") cfg.weight_decay = parse_number<double>(key, value, offset);
        else if (key == "epochs") cfg.epochs = parse_number<std::size_t>(key, value, offset);
        else if (key == "alpha") cfg.alpha = parse_number<double>(key, value, offset);
        else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value, offset);
        else if (key == "m") cfg.m = parse_number<std::size_t>(key, value, offset);
        else if (key == "hidden_dim") cfg.hidden_dim = parse_number<std::size_t>(key, value, offset);
        else if (key == "normalize_mosaics_for_ld") cfg.normalize_mosaics_for_ld = parse_bool(key, value, offset);
        else if (key == "absolute_diversity") cfg.absolute_diversity = parse_bool(key, value, offset);
        else if (key == "val_fraction") cfg.val_fraction = parse_number<double>(key, value, offset);
        else if (key == "beta1") cfg.beta1 = parse_number<double>(key, value, offset);
        else if (key == "beta2") cfg.beta2 = parse_number<double>(key, value, offset);
        else if (key == "adam_eps") cfg.adam_eps = parse_number<double>(key, value, offset);
        else throw FormatError("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'", offset);
    }
    validate(cfg);
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

void validate(const TrainConfig& c) {
    if (c.batch_size < 2) throw PreconditionError("batch_size must be at least 2 (one in-batch negative)");
    if (c.lr < 0.0 || c.weight_decay < 0.0 || c.alpha < 0.0) {
        throw PreconditionError("lr, weight_decay and alpha must be non-negative");
    }
    if (c.m < 1 || c.hidden_dim < 1) throw PreconditionError("m and hidden_dim must be positive");
    if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) throw PreconditionError("val_fraction must be in [0, 1)");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.adam_eps > 0.0)) {
        throw PreconditionError("invalid AdamW moment settings");
    }
}

Batch make_batch(const PairedDataset& data, std::span<const std::size_t> indices) {
    Batch b;
    b.slides.reserve(indices.size());
    b.texts.reserve(indices.size());
    for (std::size_t i : indices) {
        b.slides.push_back(data.items.at(i).patches);
        b.texts.push_back(data.items.at(i).text);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

void require_unit_rows(const Matrix& m, const char* what) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (std::abs(m.row(i).norm() - 1.0) > 1e-6) {
            throw PreconditionError(std::string(what) + " row " + std::to_string(i) + " is not unit norm");
        }
    }
}

// log-softmax cross entropy against the diagonal, row-wise, plus the softmax itself.
double row_cross_entropy(const Matrix& logits, Matrix* softmax) {
    double loss = 0.0;
    if (softmax) softmax->resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
        loss += lse - logits(i, i);
        if (softmax) softmax->row(i) = (logits.row(i).array() - lse).exp().matrix();
    }
    return loss / static_cast<double>(logits.rows());
}

struct ContrastiveTerms {
    double loss = 0.0;
    Matrix d_logits;  // dL/ds
};

ContrastiveTerms contrastive(const Matrix& image, const Matrix& text, double temperature_logit) {
    const double tau = std::exp(temperature_logit);
    const Matrix logits = tau * (image * text.transpose());
    Matrix p_row, p_col;
    const double row = row_cross_entropy(logits, &p_row);
    const Matrix logits_t = logits.transpose();
    const double col = row_cross_entropy(logits_t, &p_col);
    const auto b = static_cast<double>(image.rows());
    const Matrix eye = Matrix::Identity(image.rows(), image.rows());
    ContrastiveTerms out;
    out.loss = 0.5 * (row + col);
    out.d_logits = (0.5 / b) * ((p_row - eye) + (p_col - eye).transpose());
    return out;
}

// Gram weights for the diversity term: W_ij = d c'_ij / d c_ij for i != j, zero on the diagonal.
struct DiversityTerms {
    double loss = 0.0;
    Matrix d_mosaics;  // dL_d / dE^m
};

DiversityTerms diversity(const Matrix& mosaics, bool normalize, bool absolute, bool want_grad) {
    DiversityTerms out;
    const Eigen::Index m = mosaics.rows();
    if (want_grad) out.d_mosaics = Matrix::Zero(m, mosaics.cols());
    if (m < 2) return out;
    Matrix units = mosaics;
    Vector norms = Vector::Ones(m);
    if (normalize) {
        norms = mosaics.rowwise().norm();
        if ((norms.array() <= 0.0).any()) throw DegenerateInputError("diversity loss: zero-norm mosaic");
        units = norms.cwiseInverse().asDiagonal() * mosaics;
    }
    const Matrix gram = units * units.transpose();
    const double scale = 1.0 / static_cast<double>(m * m - m);
    Matrix weights = Matrix::Ones(m, m);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        weights(i, i) = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) continue;
            const double c = gram(i, j);
            sum += absolute ? std::abs(c) : c;
            if (absolute) weights(i, j) = c > 0.0 ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
        }
    }
    out.loss = scale * sum;
    if (!want_grad) return out;
    // W is symmetric, so both (i,j) and (j,i) terms contribute W_ij E_j.
    const Matrix d_units = 2.0 * scale * (weights * units);
    if (!normalize) {
        out.d_mosaics = d_units;
        return out;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
        const double proj = units.row(i).dot(d_units.row(i));
        out.d_mosaics.row(i) = (d_units.row(i) - proj * units.row(i)) / norms(i);
    }
    return out;
}

}  // namespace

double info_nce_loss(const Matrix& image_embs, const Matrix& text_embs, double temperature_logit) {
    if (image_embs.rows() != text_embs.rows() || image_embs.cols() != text_embs.cols()) {
        throw DimensionError("info_nce_loss: image and text embeddings differ in shape");
    }
    if (image_embs.rows() < 1) throw DimensionError("info_nce_loss: empty batch");
    require_unit_rows(image_embs, "image embedding");
    require_unit_rows(text_embs, "text embedding");
    return contrastive(image_embs, text_embs, temperature_logit).loss;
}

double diversity_loss(const MosaicSet& mosaics, bool normalize, bool absolute) {
    if (mosaics.m() < 2) {
        warn("diversity loss undefined for fewer than two mosaics; returning 0");
        return 0.0;
    }
    return diversity(mosaics.rows(), normalize, absolute, false).loss;
}

// ---------------------------------------------------------------------------
// Forward with tapes, and the matching backward pass
// ---------------------------------------------------------------------------

namespace {

struct SlideTape {
    CorrelationTape corr;
    Matrix correlated;
    std::vector<PoolTape> branch;
    Matrix mosaics;
    PoolTape agg;
    Vector pooled;     // aggregator output
    Vector projected;  // after optional projection
    double norm = 0.0;
    Vector unit;
};

struct TextTape {
    Vector projected;
    double norm = 0.0;
    Vector unit;
};

SlideTape forward_slide(const Matrix& patches, const EncoderModel& model) {
    SlideTape t;
    t.correlated = correlate_rows(patches, model.correlation, &t.corr);
    t.branch.resize(model.m());
    t.mosaics.resize(static_cast<Eigen::Index>(model.m()), patches.cols());
    for (std::size_t b = 0; b < model.m(); ++b) {
        t.mosaics.row(static_cast<Eigen::Index>(b)) =
            pool_rows(t.correlated, model.branches[b], &t.branch[b]).pooled.transpose();
    }
    t.pooled = pool_rows(t.mosaics, model.aggregator, &t.agg).pooled;
    t.projected = model.projection ? Vector(*model.projection * t.pooled) : t.pooled;
    t.norm = t.projected.norm();
    if (!(t.norm > 0.0)) throw DegenerateInputError("slide embedding collapsed to zero");
    t.unit = t.projected / t.norm;
    return t;
}

TextTape forward_text(const Vector& raw, const EncoderModel& model) {
    TextTape t;
    t.projected = model.text_projection ? Vector(*model.text_projection * raw) : raw;
    t.norm = t.projected.norm();
    if (!(t.norm > 0.0)) throw DegenerateInputError("text embedding collapsed to zero");
    t.unit = t.projected / t.norm;
    return t;
}

// d(v/|v|) pulled back to v.
Vector normalize_backward(const Vector& unit, double norm, const Vector& d_unit) {
    return (d_unit - unit * unit.dot(d_unit)) / norm;
}

void pool_backward(const PoolTape& tape, const GatedAttentionParams& params, const Vector& d_pooled,
                   GatedAttentionParams& grad, Matrix* d_rows) {
    const Matrix& rows = tape.rows;
    const Vector& a = tape.weights;
    const Vector da = rows * d_pooled;
    const Vector dl = a.cwiseProduct((da.array() - a.dot(da)).matrix());
    const Matrix gated = tape.tanh_u.cwiseProduct(tape.sig_g);
    grad.w += gated.transpose() * dl;
    const Matrix d_gated = dl * params.w.transpose();
    const Matrix du =
        d_gated.cwiseProduct(tape.sig_g).cwiseProduct((1.0 - tape.tanh_u.array().square()).matrix());
    const Matrix dg = d_gated.cwiseProduct(tape.tanh_u)
                          .cwiseProduct(tape.sig_g)
                          .cwiseProduct((1.0 - tape.sig_g.array()).matrix());
    grad.v1 += du.transpose() * rows;
    grad.v2 += dg.transpose() * rows;
    if (d_rows) *d_rows += a * d_pooled.transpose() + du * params.v1 + dg * params.v2;
}

void correlation_backward(const CorrelationTape& tape, const Matrix& d_out, CorrelationParams& grad) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(tape.x.cols()));
    const Matrix dv = tape.attn.transpose() * d_out;
    const Matrix d_attn = d_out * tape.v.transpose();
    const Vector row_dot = d_attn.cwiseProduct(tape.attn).rowwise().sum();
    const Matrix d_scores = tape.attn.cwiseProduct(d_attn - row_dot.replicate(1, d_attn.cols()));
    const Matrix dq = scale * (d_scores * tape.k);
    const Matrix dk = scale * (d_scores.transpose() * tape.q);
    grad.wq += tape.x.transpose() * dq;
    grad.wk += tape.x.transpose() * dk;
    grad.wv += tape.x.transpose() * dv;
}

void check_batch(const Batch& batch, const EncoderModel& model) {
    if (batch.size() == 0) throw DimensionError("empty batch");
    if (batch.slides.size() != batch.texts.size()) throw DimensionError("batch slide/text counts differ");
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch.slides[i].dim() != model.dim() || static_cast<std::size_t>(batch.texts[i].size()) != model.dim()) {
            throw DimensionError("batch item " + std::to_string(i) + " does not match encoder dim");
        }
    }
}

struct BatchForward {
    std::vector<SlideTape> slides;
    std::vector<TextTape> texts;
    Matrix image;
    Matrix text;
};

BatchForward forward_batch(const Batch& batch, const EncoderModel& model) {
    check_batch(batch, model);
    BatchForward f;
    const auto b = static_cast<Eigen::Index>(batch.size());
    const auto c = static_cast<Eigen::Index>(model.dim());
    f.image.resize(b, c);
    f.text.resize(b, c);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        f.slides.push_back(forward_slide(batch.slides[i].data(), model));
        f.texts.push_back(forward_text(batch.texts[i], model));
        f.image.row(static_cast<Eigen::Index>(i)) = f.slides.back().unit.transpose();
        f.text.row(static_cast<Eigen::Index>(i)) = f.texts.back().unit.transpose();
    }
    return f;
}

}  // namespace

LossBreakdown total_loss(const Batch& batch, const EncoderModel& model, const LossOptions& options) {
    const BatchForward f = forward_batch(batch, model);
    LossBreakdown out;
    out.contrastive = contrastive(f.image, f.text, model.temperature_logit).loss;
    for (const auto& s : f.slides) {
        out.diversity += diversity(s.mosaics, options.normalize_mosaics, options.absolute_diversity, false).loss;
    }
    out.diversity /= static_cast<double>(batch.size());
    out.total = out.contrastive + options.alpha * out.diversity;
    return out;
}

GradientResult gradients(const Batch& batch, const EncoderModel& model, const LossOptions& options) {
    const BatchForward f = forward_batch(batch, model);
    GradientResult result{{}, zeros_like(model)};
    EncoderModel& grad = result.grad;

    const ContrastiveTerms ct = contrastive(f.image, f.text, model.temperature_logit);
    const double tau = std::exp(model.temperature_logit);
    const Matrix logits = tau * (f.image * f.text.transpose());
    grad.temperature_logit = ct.d_logits.cwiseProduct(logits).sum();
    const Matrix d_image = tau * (ct.d_logits * f.text);
    const Matrix d_text = tau * (ct.d_logits.transpose() * f.image);

    const double diversity_scale = options.alpha / static_cast<double>(batch.size());
    double diversity_sum = 0.0;

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);

        const TextTape& tt = f.texts[i];
        const Vector d_text_proj = normalize_backward(tt.unit, tt.norm, d_text.row(row).transpose());
        if (model.text_projection) *grad.text_projection += d_text_proj * batch.texts[i].transpose();

        const SlideTape& st = f.slides[i];
        const Vector d_proj = normalize_backward(st.unit, st.norm, d_image.row(row).transpose());
        Vector d_pooled = d_proj;
        if (model.projection) {
            *grad.projection += d_proj * st.pooled.transpose();
            d_pooled = model.projection->transpose() * d_proj;
        }

        Matrix d_mosaics = Matrix::Zero(st.mosaics.rows(), st.mosaics.cols());
        pool_backward(st.agg, model.aggregator, d_pooled, grad.aggregator, &d_mosaics);

        const DiversityTerms dt =
            diversity(st.mosaics, options.normalize_mosaics, options.absolute_diversity, true);
        diversity_sum += dt.loss;
        d_mosaics += diversity_scale * dt.d_mosaics;

        Matrix d_correlated = Matrix::Zero(st.correlated.rows(), st.correlated.cols());
        for (std::size_t b = 0; b < model.m(); ++b) {
            pool_backward(st.branch[b], model.branches[b], d_mosaics.row(static_cast<Eigen::Index>(b)).transpose(),
                          grad.branches[b], &d_correlated);
        }
        correlation_backward(st.corr, d_correlated, grad.correlation);
    }

    result.loss.contrastive = ct.loss;
    result.loss.diversity = diversity_sum / static_cast<double>(batch.size());
    result.loss.total = result.loss.contrastive + options.alpha * result.loss.diversity;

    for (const auto& p : parameters(std::as_const(grad))) {
        for (double v : p.values) {
            if (!std::isfinite(v)) throw NumericError("non-finite gradient in " + p.name);
        }
    }
    if (!std::isfinite(result.loss.total)) throw NumericError("non-finite loss");
    return result;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

AdamW::AdamW(const EncoderModel& like, double lr, double weight_decay, double beta1, double beta2, double eps)
    : m_(zeros_like(like)), v_(zeros_like(like)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1),
      beta2_(beta2), eps_(eps) {}

void AdamW::step(EncoderModel& model, const EncoderModel& grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto params = parameters(model);
    const auto grads = parameters(grad);
    auto ms = parameters(m_);
    auto vs = parameters(v_);
    if (params.size() != grads.size() || params.size() != ms.size()) {
        throw DimensionError("AdamW: gradient set does not match model");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        const bool decay = params[k].name != "temperature_logit";
        auto& p = params[k].values;
        const auto& g = grads[k].values;
        auto& m = ms[k].values;
        auto& v = vs[k].values;
        if (g.size() != p.size()) throw DimensionError("AdamW: shape mismatch in " + params[k].name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            p[i] -= lr_ * (update + (decay ? weight_decay_ * p[i] : 0.0));
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

LossBreakdown evaluate_loss(const PairedDataset& data, std::span<const std::size_t> indices,
                            const EncoderModel& model, const LossOptions& options, std::size_t batch_size) {
    LossBreakdown acc;
    if (indices.empty()) return acc;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
        const LossBreakdown l = total_loss(make_batch(data, chunk), model, options);
        const auto w = static_cast<double>(chunk.size());
        acc.total += w * l.total;
        acc.contrastive += w * l.contrastive;
        acc.diversity += w * l.diversity;
        seen += chunk.size();
    }
    const auto n = static_cast<double>(seen);
    acc.total /= n;
    acc.contrastive /= n;
    acc.diversity /= n;
    return acc;
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    // A trailing singleton has no negatives; fold it into the previous batch.
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

}  // namespace

TrainResult train(const TrainConfig& config, const PairedDataset& data) {
    EncoderShape shape;
    shape.dim = data.dim;
    shape.hidden_dim = config.hidden_dim;
    shape.m = config.m;
    return train(config, data, init_encoder(shape, config.seed));
}

TrainResult train(const TrainConfig& config, const PairedDataset& data, EncoderModel model) {
    validate(config);
    validate(model);
    if (data.items.size() < 2) throw PreconditionError("training needs at least two pairs");
    if (model.dim() != data.dim) throw DimensionError("dataset dim does not match encoder dim");

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> all(data.items.size());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(all.size())));
    n_val = std::min(n_val, all.size() - 2);
    const std::vector<std::size_t> val(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(all.begin() + static_cast<std::ptrdiff_t>(n_val), all.end());
    const std::span<const std::size_t> selection_set = val.empty() ? std::span<const std::size_t>(train_idx)
                                                                   : std::span<const std::size_t>(val);

    const LossOptions options{config.alpha, config.normalize_mosaics_for_ld, config.absolute_diversity};
    AdamW optimizer(model, config.lr, config.weight_decay, config.beta1, config.beta2, config.adam_eps);

    TrainResult result;
    result.initial_val_contrastive = evaluate_loss(data, selection_set, model, options, config.batch_size).contrastive;
    double best = std::numeric_limits<double>::infinity();
    result.model = model;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch;
        double weight = 0.0;
        for (const auto& idx : make_batches(train_idx, config.batch_size)) {
            const Batch batch = make_batch(data, idx);
            GradientResult g;
            try {
                g = gradients(batch, model, options);
            } catch (const NumericError& e) {
                throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(),
                                       result.trace);
            }
            optimizer.step(model, g.grad);
            const auto w = static_cast<double>(idx.size());
            rec.train_loss += w * g.loss.total;
            rec.l_c += w * g.loss.contrastive;
            rec.l_d += w * g.loss.diversity;
            weight += w;
        }
        rec.train_loss /= weight;
        rec.l_c /= weight;
        rec.l_d /= weight;
        const LossBreakdown v = evaluate_loss(data, selection_set, model, options, config.batch_size);
        rec.val_loss = v.total;
        if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
            result.trace.push_back(rec);
            throw TrainingDiverged("loss became non-finite at epoch " + std::to_string(epoch), result.trace);
        }
        result.trace.push_back(rec);
        if (rec.val_loss < best) {
            best = rec.val_loss;
            result.model = model;
            result.best_epoch = epoch;
            result.final_val_contrastive = v.contrastive;
        }
    }
    if (config.epochs == 0) result.final_val_contrastive = result.initial_val_contrastive;
    return result;
}

std::string trace_to_csv(const std::vector<EpochRecord>& trace) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,train_loss,val_loss,l_c,l_d\n";
    for (const auto& r : trace) {
        out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.l_c << ',' << r.l_d << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

PairedDataset synth_dataset(const SynthConfig& config) {
    if (config.classes < 2) throw PreconditionError("synthetic corpus needs at least two classes");
    if (config.per_class < 1 || config.dim < 1) throw PreconditionError("per_class and dim must be positive");
    if (config.patches_low < 1 || config.patches_low > config.patches_high) {
        throw PreconditionError("patch range must satisfy 1 <= low <= high");
    }
    if (config.sigma < 0.0) throw PreconditionError("sigma must be non-negative");

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto c = static_cast<Eigen::Index>(config.dim);

    std::vector<Vector> centers;
    for (std::size_t g = 0; g < config.classes; ++g) {
        Vector mu(c);
        for (auto& x : mu) x = normal(rng);
        centers.push_back(mu.normalized());
    }

    constexpr std::size_t kClassWords = 8;
    constexpr std::size_t kWordsPerReport = 6;
    static constexpr std::string_view kFiller[] = {"slide", "tissue", "section", "stain", "sample",
                                                 "observed", "noted", "features", "specimen", "review"};

    PairedDataset out;
    out.dim = config.dim;
    const HashTextEmbedder embedder(config.dim);
    std::uniform_int_distribution<std::size_t> n_dist(config.patches_low, config.patches_high);
    std::uniform_int_distribution<std::size_t> filler_dist(0, std::size(kFiller) - 1);

    for (std::size_t g = 0; g < config.classes; ++g) {
        out.label_names.push_back("class_" + std::to_string(g));
        for (std::size_t s = 0; s < config.per_class; ++s) {
            const std::size_t n = n_dist(rng);
            Matrix patches(static_cast<Eigen::Index>(n), c);
            for (Eigen::Index r = 0; r < patches.rows(); ++r) {
                for (Eigen::Index j = 0; j < c; ++j) patches(r, j) = centers[g](j) + config.sigma * normal(rng);
            }

            std::vector<std::size_t> words(kClassWords);
            std::iota(words.begin(), words.end(), 0);
            std::shuffle(words.begin(), words.end(), rng);
            std::string report;
            for (std::size_t k = 0; k < kWordsPerReport; ++k) {
                report += "term" + std::to_string(g) + "_" + std::to_string(words[k]) + ' ';
            }
            report += std::string(kFiller[filler_dist(rng)]) + ' ' + std::string(kFiller[filler_dist(rng)]);

            PairedExample ex;
            ex.id = "synth_" + std::to_string(g) + "_" + std::to_string(s);
            ex.label = static_cast<int>(g);
            ex.patches = PatchEmbeddingMatrix(std::move(patches));
            ex.text = embedder.embed(report);
            ex.report = std::move(report);
            out.items.push_back(std::move(ex));
        }
    }
    return out;
}

}  // namespace pathsearch
