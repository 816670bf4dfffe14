#include "pathsearch/pipeline.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pathsearch/patch_io.hpp"

namespace pathsearch {

namespace {

std::optional<int> parse_label(const std::string& s, std::uint64_t line) {
    if (s.empty()) return std::nullopt;
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0 || v >= kNoLabel) {
        throw FormatError("bad label '" + s + "' on line " + std::to_string(line), line);
    }
    return v;
}

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

void save_dataset(const PairedDataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv", std::ios::binary | std::ios::trunc);
    std::ofstream labels(dir / "labels.csv", std::ios::binary | std::ios::trunc);
    if (!manifest || !labels) throw Error("cannot write dataset files in " + dir.string());
    manifest << "id,label,file,report\n";
    labels << "id,label\n";
    for (const auto& ex : data.items) {
        if (ex.id.find(',') != std::string::npos) throw PreconditionError("slide id may not contain ','");
        const std::string file = ex.id + ".pemb";
        write_pemb(dir / file, ex.patches);
        const std::string label = ex.label ? std::to_string(*ex.label) : "";
        manifest << ex.id << ',' << label << ',' << file << ',' << ex.report << '\n';
        labels << ex.id << ',' << label << '\n';
    }
}

PairedDataset load_dataset(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.csv";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != "id,label,file,report") {
        throw FormatError(path.string() + ": expected header id,label,file,report", 0);
    }
    PairedDataset data;
    std::uint64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::size_t pos = 0;
        for (int i = 0; i < 3; ++i) {
            const auto comma = line.find(',', pos);
            if (comma == std::string::npos) {
                throw FormatError(path.string() + ": line " + std::to_string(line_no) + " needs 4 fields", line_no);
            }
            f.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        f.push_back(line.substr(pos));  // the report may itself contain commas
        PairedExample ex;
        ex.id = f[0];
        ex.label = parse_label(f[1], line_no);
        ex.patches = read_patches(dir / f[2]);
        ex.report = f[3];
        if (data.dim == 0) data.dim = ex.patches.dim();
        if (ex.patches.dim() != data.dim) {
            throw DimensionError(ex.id + ": patch dim " + std::to_string(ex.patches.dim()) + " differs from " +
                                 std::to_string(data.dim));
        }
        data.items.push_back(std::move(ex));
    }
    if (data.items.empty()) throw FormatError(path.string() + ": no slides listed", line_no);
    const HashTextEmbedder embedder(data.dim);
    int max_label = -1;
    for (auto& ex : data.items) {
        ex.text = embedder.embed(ex.report);
        if (ex.label) max_label = std::max(max_label, *ex.label);
    }
    for (int l = 0; l <= max_label; ++l) data.label_names.push_back("class_" + std::to_string(l));
    return data;
}

std::unordered_map<std::string, int> load_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    std::string line;
    if (!std::getline(in, line) || strip_cr(line) != "id,label") {
        throw FormatError(path.string() + ": expected header id,label", 0);
    }
    std::unordered_map<std::string, int> out;
    std::uint64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError(path.string() + ": missing label column", line_no);
        if (auto label = parse_label(line.substr(comma + 1), line_no)) out[line.substr(0, comma)] = *label;
    }
    return out;
}

RetrievalIndex build_index(const PairedDataset& data, const EncoderModel& model, std::uint8_t float_width) {
    validate(model);
    if (data.dim != model.dim()) throw DimensionError("dataset dim does not match encoder dim");
    RetrievalIndex index(model.m(), model.dim(), float_width, data.label_names);
    for (const auto& ex : data.items) {
        const SlideEncoding enc = encode_slide(ex.patches, model);
        SlideRecord rec;
        rec.id = ex.id;
        if (ex.label) rec.label = static_cast<std::uint16_t>(*ex.label);
        rec.mosaic_code = binarize(enc.mosaics);
        rec.semantic = enc.semantic;
        if (ex.text.size() > 0 && ex.text.squaredNorm() > 0.0) {
            Vector t = model.text_projection ? Vector(*model.text_projection * ex.text) : ex.text;
            rec.text_semantic = l2_normalize(t);
        }
        index.add(std::move(rec));
    }
    return index;
}

namespace {

std::optional<int> label_of(const SlideRecord& rec, const std::unordered_map<std::string, int>* labels) {
    if (labels) {
        if (auto it = labels->find(rec.id); it != labels->end()) return it->second;
        return std::nullopt;
    }
    if (rec.label) return static_cast<int>(*rec.label);
    return std::nullopt;
}

template <class Query>
LeaveOneOutRun leave_one_out(const RetrievalIndex& index, const std::unordered_map<std::string, int>* labels,
                             Query&& query) {
    LeaveOneOutRun run;
    std::unordered_map<std::string, std::optional<int>> label_by_id;
    for (const auto& rec : index.records()) label_by_id[rec.id] = label_of(rec, labels);
    for (const auto& rec : index.records()) {
        const auto query_label = label_by_id[rec.id];
        if (!query_label) continue;
        LabeledRanking ranking;
        ranking.query_label = *query_label;
        std::size_t rank = 0;
        for (const std::string& id : query(rec)) {
            const auto cand = label_by_id[id];
            if (!cand) continue;
            ++rank;
            ranking.retrieved_labels.push_back(*cand);
            run.rows.push_back({rec.id, *query_label, rank, *cand});
        }
        if (!ranking.retrieved_labels.empty()) run.rankings.push_back(std::move(ranking));
    }
    run.suite = accuracy_suite(run.rankings);
    return run;
}

}  // namespace

LeaveOneOutRun evaluate_image_to_image(const RetrievalIndex& index, const FusionConfig& config,
                                       const std::unordered_map<std::string, int>* labels) {
    return leave_one_out(index, labels, [&](const SlideRecord& rec) {
        const QuerySlide q{rec.mosaic_code, rec.semantic, rec.id};
        std::vector<std::string> ids;
        for (const auto& r : query_image(q, index, config)) ids.push_back(r.candidate_id);
        return ids;
    });
}

LeaveOneOutRun evaluate_text_to_image(const RetrievalIndex& index, std::size_t top_k,
                                      const std::unordered_map<std::string, int>* labels) {
    return leave_one_out(index, labels, [&](const SlideRecord& rec) {
        std::vector<std::string> ids;
        if (!rec.text_semantic) return ids;
        for (const auto& r : query_text_to_image(*rec.text_semantic, index, top_k, rec.id)) ids.push_back(r.id);
        return ids;
    });
}

}  // namespace pathsearch
