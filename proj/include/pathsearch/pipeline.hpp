#pragma once

// Glue between the modules: dataset directories on disk, index construction from
// an encoder, and leave-one-out evaluation runs.

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pathsearch/encoder.hpp"
#include "pathsearch/eval.hpp"
#include "pathsearch/index.hpp"
#include "pathsearch/training.hpp"

namespace pathsearch {

/// Writes <dir>/<id>.pemb for every slide plus <dir>/manifest.csv with the header
/// `id,label,file,report` and <dir>/labels.csv with `id,label`.
void save_dataset(const PairedDataset& data, const std::filesystem::path& dir);

/// Reads a manifest written by save_dataset (or by hand). Reports are embedded with the
/// hash text embedder of the slide dimension. An empty label field means unlabeled.
PairedDataset load_dataset(const std::filesystem::path& dir);

/// id -> label from a CSV with header `id,label`.
std::unordered_map<std::string, int> load_labels_csv(const std::filesystem::path& path);

/// Encodes every slide: binarized mosaics, semantic vector, and the projected text vector.
RetrievalIndex build_index(const PairedDataset& data, const EncoderModel& model, std::uint8_t float_width = 8);

struct LeaveOneOutRun {
    std::vector<RankingRow> rows;
    std::vector<LabeledRanking> rankings;
    AccuracySuite suite;
};

/// Every labeled record queries the rest of the index with query_image (itself excluded).
/// `labels` overrides stored labels when given.
LeaveOneOutRun evaluate_image_to_image(const RetrievalIndex& index, const FusionConfig& config,
                                       const std::unordered_map<std::string, int>* labels = nullptr);

/// Each record's stored text vector queries record semantic vectors (itself excluded).
LeaveOneOutRun evaluate_text_to_image(const RetrievalIndex& index, std::size_t top_k = 5,
                                      const std::unordered_map<std::string, int>* labels = nullptr);

}  // namespace pathsearch
