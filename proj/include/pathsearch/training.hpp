#pragma once

// Joint contrastive + diversity training of the encoder, with hand-derived
// reverse-mode gradients, an AdamW optimizer and a seeded synthetic corpus
// for desk-scale experiments.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pathsearch/core.hpp"
#include "pathsearch/encoder.hpp"

namespace pathsearch {

struct TrainConfig {
    std::size_t batch_size = 128;
    double lr = 8e-5;
    double weight_decay = 0.05;
    std::size_t epochs = 100;
    double alpha = 1.0;
    std::uint64_t seed = 0;
    std::size_t m = kDefaultMosaics;
    std::size_t hidden_dim = 256;
    bool normalize_mosaics_for_ld = true;
    bool absolute_diversity = false;  // |c_ij| instead of c_ij
    double val_fraction = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are an error.
TrainConfig parse_train_config(std::string_view text);
TrainConfig load_train_config(const std::filesystem::path& path);
void validate(const TrainConfig& config);

/// One slide paired with its report. `text` is the raw text-embedder output.
struct PairedExample {
    std::string id;
    std::optional<int> label;
    PatchEmbeddingMatrix patches;
    std::string report;
    Vector text;
};

struct PairedDataset {
    std::size_t dim = 0;
    std::vector<PairedExample> items;
    std::vector<std::string> label_names;
};

/// Pair i <-> i is positive; every other in-batch pairing is a negative.
struct Batch {
    std::vector<PatchEmbeddingMatrix> slides;
    std::vector<Vector> texts;

    std::size_t size() const noexcept { return slides.size(); }
};

Batch make_batch(const PairedDataset& data, std::span<const std::size_t> indices);

struct LossOptions {
    double alpha = 1.0;
    bool normalize_mosaics = true;
    bool absolute_diversity = false;
};

/// Symmetric InfoNCE over logits exp(temperature_logit) * <image_i, text_j>.
/// Rows must be unit norm (PreconditionError otherwise).
double info_nce_loss(const Matrix& image_embs, const Matrix& text_embs, double temperature_logit);

/// Mean off-diagonal entry of the mosaic Gram matrix; 0 (with a warning) when M < 2.
double diversity_loss(const MosaicSet& mosaics, bool normalize = true, bool absolute = false);

struct LossBreakdown {
    double total = 0.0;
    double contrastive = 0.0;
    double diversity = 0.0;  // mean over slides, before alpha
};

LossBreakdown total_loss(const Batch& batch, const EncoderModel& model, const LossOptions& options);

struct GradientResult {
    LossBreakdown loss;
    EncoderModel grad;  // same shapes as the model
};

/// Exact gradient of total_loss with respect to every tensor in parameters(model).
/// Throws NumericError naming the parameter if any gradient entry is not finite.
GradientResult gradients(const Batch& batch, const EncoderModel& model, const LossOptions& options);

/// Decoupled-weight-decay Adam with bias correction. temperature_logit is not decayed.
class AdamW {
public:
    AdamW(const EncoderModel& like, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);
    void step(EncoderModel& model, const EncoderModel& grad);
    std::size_t steps() const noexcept { return t_; }

private:
    EncoderModel m_;
    EncoderModel v_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double l_c = 0.0;
    double l_d = 0.0;
};

struct TrainResult {
    EncoderModel model;  // checkpoint with the lowest validation total loss
    std::vector<EpochRecord> trace;
    std::size_t best_epoch = 0;
    double initial_val_contrastive = 0.0;
    double final_val_contrastive = 0.0;
};

class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(const std::string& what, std::vector<EpochRecord> trace)
        : NumericError(what), trace_(std::move(trace)) {}
    const std::vector<EpochRecord>& trace() const noexcept { return trace_; }

private:
    std::vector<EpochRecord> trace_;
};

/// Deterministic given config.seed. A seeded val_fraction of pairs is held out for
/// checkpoint selection.
TrainResult train(const TrainConfig& config, const PairedDataset& data);
TrainResult train(const TrainConfig& config, const PairedDataset& data, EncoderModel initial);

/// Contrastive and diversity loss over `indices`, evaluated in chunks of `batch_size`
/// and averaged by chunk size.
LossBreakdown evaluate_loss(const PairedDataset& data, std::span<const std::size_t> indices,
                            const EncoderModel& model, const LossOptions& options, std::size_t batch_size);

std::string trace_to_csv(const std::vector<EpochRecord>& trace);

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::size_t classes = 4;
    std::size_t per_class = 50;
    std::size_t patches_low = 16;
    std::size_t patches_high = 48;
    std::size_t dim = kDefaultDim;
    double sigma = 0.3;
    std::uint64_t seed = 0;
};

/// Class centers on the unit sphere; patches ~ Normal(center, sigma^2 I); each report is
/// drawn from a class-specific vocabulary plus shared filler words.
PairedDataset synth_dataset(const SynthConfig& config);

}  // namespace pathsearch
