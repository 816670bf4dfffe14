#include "pathsearch/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pathsearch/bench.hpp"
#include "pathsearch/encoder.hpp"
#include "pathsearch/eval.hpp"
#include "pathsearch/index.hpp"
#include "pathsearch/patch_io.hpp"
#include "pathsearch/pipeline.hpp"
#include "pathsearch/training.hpp"

namespace pathsearch::cli {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Format { table, csv, json_lines };

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + path + " for writing");
    f << text;
}

void print_results(std::ostream& out, const std::vector<RetrievalResult>& results, Format fmt) {
    switch (fmt) {
        case Format::csv:
            out << "rank,candidate_id,fused_distance,mosaic_distance,semantic_distance\n";
            out << std::setprecision(17);
            for (const auto& r : results) {
                out << r.rank << ',' << r.candidate_id << ',' << r.fused_distance << ',' << r.mosaic_distance << ','
                    << r.semantic_distance << '\n';
            }
            break;
        case Format::json_lines:
            for (const auto& r : results) {
                out << nlohmann::json{{"rank", r.rank},
                                      {"candidate_id", r.candidate_id},
                                      {"fused_distance", r.fused_distance},
                                      {"mosaic_distance", r.mosaic_distance},
                                      {"semantic_distance", r.semantic_distance}}
                           .dump()
                    << '\n';
            }
            break;
        case Format::table:
            out << std::left << std::setw(6) << "rank" << std::setw(28) << "candidate" << std::right << std::setw(14)
                << "D_fuse" << std::setw(12) << "D_mosaic" << std::setw(12) << "D_sem" << '\n';
            for (const auto& r : results) {
                out << std::left << std::setw(6) << r.rank << std::setw(28) << r.candidate_id << std::right
                    << std::fixed << std::setprecision(4) << std::setw(14) << r.fused_distance << std::setw(12)
                    << r.mosaic_distance << std::setw(12) << r.semantic_distance << '\n';
            }
            out.unsetf(std::ios::fixed);
            break;
    }
}

void print_ranked(std::ostream& out, const std::vector<RankedId>& results, Format fmt) {
    switch (fmt) {
        case Format::csv:
            out << "rank,id,distance\n" << std::setprecision(17);
            for (const auto& r : results) out << r.rank << ',' << r.id << ',' << r.distance << '\n';
            break;
        case Format::json_lines:
            for (const auto& r : results) {
                out << nlohmann::json{{"rank", r.rank}, {"id", r.id}, {"distance", r.distance}}.dump() << '\n';
            }
            break;
        case Format::table:
            out << std::left << std::setw(6) << "rank" << std::setw(28) << "id" << std::right << std::setw(12)
                << "distance" << '\n';
            for (const auto& r : results) {
                out << std::left << std::setw(6) << r.rank << std::setw(28) << r.id << std::right << std::fixed
                    << std::setprecision(4) << std::setw(12) << r.distance << '\n';
            }
            out.unsetf(std::ios::fixed);
            break;
    }
}

void print_metrics(std::ostream& out, const std::vector<std::pair<std::string, double>>& metrics, Format fmt) {
    switch (fmt) {
        case Format::csv:
            out << "metric,value\n" << std::setprecision(17);
            for (const auto& [k, v] : metrics) out << k << ',' << v << '\n';
            break;
        case Format::json_lines:
            for (const auto& [k, v] : metrics) out << nlohmann::json{{"metric", k}, {"value", v}}.dump() << '\n';
            break;
        case Format::table:
            for (const auto& [k, v] : metrics) {
                out << std::left << std::setw(28) << k << std::right << std::fixed << std::setprecision(4) << v
                    << '\n';
            }
            out.unsetf(std::ios::fixed);
            break;
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Whole-slide retrieval: mosaic + semantic fusion search"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string format_name = "table";
    std::uint64_t seed = 0;
    bool seed_given = false;
    app.add_option("--format", format_name, "Output format")->check(CLI::IsMember({"table", "csv", "json-lines"}));

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic paired corpus");
    SynthConfig synth_cfg;
    std::string synth_out;
    synth->add_option("--classes", synth_cfg.classes)->check(CLI::Range(2, 1 << 16));
    synth->add_option("--per-class", synth_cfg.per_class)->check(CLI::PositiveNumber);
    synth->add_option("--patches-low", synth_cfg.patches_low)->check(CLI::PositiveNumber);
    synth->add_option("--patches-high", synth_cfg.patches_high)->check(CLI::PositiveNumber);
    synth->add_option("--dim", synth_cfg.dim)->check(CLI::PositiveNumber);
    synth->add_option("--sigma", synth_cfg.sigma)->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", seed);
    synth->add_option("--out", synth_out, "Output directory")->required();

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate patch embeddings (PEMB or CSV) and write PEMB");
    std::string ingest_in, ingest_out;
    std::size_t ingest_dim = 0;
    ingest->add_option("--input", ingest_in)->required();
    ingest->add_option("--out", ingest_out)->required();
    ingest->add_option("--dim", ingest_dim, "Expected embedding dimension");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train the encoder on a dataset directory");
    std::string train_data, train_config, train_out, train_trace;
    std::optional<std::size_t> train_epochs;
    std::optional<double> train_lr;
    train_cmd->add_option("--data", train_data)->required();
    train_cmd->add_option("--config", train_config, "key=value training config");
    train_cmd->add_option("--out", train_out, "Model output path")->required();
    train_cmd->add_option("--trace", train_trace, "Loss trace CSV output");
    train_cmd->add_option("--epochs", train_epochs);
    train_cmd->add_option("--lr", train_lr);
    train_cmd->add_option("--seed", seed);

    // build-index
    auto* build = app.add_subcommand("build-index", "Encode a dataset into a PSIX index");
    std::string build_data, build_model, build_out;
    int float_width = 8;
    std::size_t build_m = kDefaultMosaics, build_hidden = 256;
    build->add_option("--data", build_data)->required();
    build->add_option("--model", build_model, "Trained model; without it a seeded untrained encoder is used");
    build->add_option("--out", build_out)->required();
    build->add_option("--float-width", float_width)->check(CLI::IsMember({4, 8}));
    build->add_option("--m", build_m)->check(CLI::PositiveNumber);
    build->add_option("--hidden-dim", build_hidden)->check(CLI::PositiveNumber);
    build->add_option("--seed", seed);

    // query
    auto* query = app.add_subcommand("query", "Query an index");
    std::string q_index, q_id, q_pemb, q_text, q_model, q_target = "image";
    FusionConfig fusion;
    bool no_normalize = false;
    query->add_option("--index", q_index)->required();
    query->add_option("--id", q_id, "Query with a stored record (excluded from results)");
    query->add_option("--pemb", q_pemb, "Query with a patch-embedding file (needs --model)");
    query->add_option("--text", q_text, "Free-text query (needs --model)");
    query->add_option("--model", q_model);
    query->add_option("--target", q_target, "Retrieve slides (image) or reports (text)")
        ->check(CLI::IsMember({"image", "text"}));
    query->add_option("--beta", fusion.beta)->check(CLI::NonNegativeNumber);
    query->add_flag("--no-normalize", no_normalize);
    query->add_option("--top-k", fusion.top_k)->check(CLI::PositiveNumber);
    query->add_option("--prune", fusion.prune_shortlist, "Mosaic-stage shortlist size (0 = off)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Retrieval accuracy and agreement statistics");
    std::string e_index, e_labels, e_rankings, e_rankings_out, e_raters;
    std::vector<std::uint64_t> e_mcnemar;
    bool e_text = false;
    FusionConfig e_fusion;
    e_fusion.top_k = 5;
    bool e_no_normalize = false;
    eval_cmd->add_option("--index", e_index, "Run leave-one-out image-to-image retrieval over this index");
    eval_cmd->add_option("--labels", e_labels, "CSV id,label overriding stored labels");
    eval_cmd->add_flag("--text-to-image", e_text, "Also evaluate stored reports as text queries");
    eval_cmd->add_option("--rankings", e_rankings, "Score an existing rankings CSV");
    eval_cmd->add_option("--rankings-out", e_rankings_out, "Write the leave-one-out rankings CSV");
    eval_cmd->add_option("--raters", e_raters, "Rater table CSV subject,truth,r1..rK");
    eval_cmd->add_option("--mcnemar", e_mcnemar, "Discordant counts b c")->expected(2);
    eval_cmd->add_option("--beta", e_fusion.beta)->check(CLI::NonNegativeNumber);
    eval_cmd->add_flag("--no-normalize", e_no_normalize);

    // bench
    auto* bench = app.add_subcommand("bench", "Cost model and scaling benchmark");
    ScalingConfig scfg;
    std::string b_out, b_plot;
    std::uint64_t budget = 1'000'000'000;
    bench->add_option("--sizes", scfg.pathsearch_sizes, "Database sizes for the mosaic scan");
    bench->add_option("--baseline-sizes", scfg.baseline_sizes);
    bench->add_option("--p-bars", scfg.p_bars);
    bench->add_option("--fractions", scfg.fractions);
    bench->add_option("--repetitions", scfg.repetitions)->check(CLI::PositiveNumber);
    bench->add_option("--m", scfg.m)->check(CLI::PositiveNumber);
    bench->add_option("--dim", scfg.dim)->check(CLI::PositiveNumber);
    bench->add_option("--budget", budget)->check(CLI::PositiveNumber);
    bench->add_option("--out", b_out, "Scaling CSV output (stdout when omitted)");
    bench->add_option("--plot-data", b_plot, "Analytic curve CSV output");
    bench->add_option("--seed", seed);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();  // program name
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }
    for (auto* sub : app.get_subcommands()) {
        if (auto* opt = sub->get_option_no_throw("--seed"); opt && opt->count() > 0) seed_given = true;
    }
    const Format fmt = format_name == "csv" ? Format::csv : format_name == "json-lines" ? Format::json_lines
                                                                                        : Format::table;

    try {
        if (synth->parsed()) {
            synth_cfg.seed = seed;
            const PairedDataset data = synth_dataset(synth_cfg);
            save_dataset(data, synth_out);
            out << "wrote " << data.items.size() << " slides (dim " << data.dim << ") to " << synth_out << '\n';
        } else if (ingest->parsed()) {
            const PatchEmbeddingMatrix patches = read_patches(ingest_in);
            if (ingest_dim != 0 && patches.dim() != ingest_dim) {
                throw DimensionError("expected dim " + std::to_string(ingest_dim) + ", got " +
                                     std::to_string(patches.dim()));
            }
            write_pemb(ingest_out, patches);
            out << "ingested " << patches.n_patches() << " patches x " << patches.dim() << " dims\n";
        } else if (train_cmd->parsed()) {
            TrainConfig cfg = train_config.empty() ? TrainConfig{} : load_train_config(train_config);
            if (seed_given) cfg.seed = seed;
            if (train_epochs) cfg.epochs = *train_epochs;
            if (train_lr) cfg.lr = *train_lr;
            const PairedDataset data = load_dataset(train_data);
            const TrainResult result = train(cfg, data);
            save_model(result.model, train_out);
            if (!train_trace.empty()) write_text(train_trace, trace_to_csv(result.trace));
            print_metrics(out,
                          {{"epochs", static_cast<double>(cfg.epochs)},
                           {"best_epoch", static_cast<double>(result.best_epoch)},
                           {"initial_val_l_c", result.initial_val_contrastive},
                           {"best_val_l_c", result.final_val_contrastive}},
                          fmt);
        } else if (build->parsed()) {
            const PairedDataset data = load_dataset(build_data);
            EncoderModel model;
            if (build_model.empty()) {
                EncoderShape shape;
                shape.dim = data.dim;
                shape.m = build_m;
                shape.hidden_dim = build_hidden;
                model = init_encoder(shape, seed);
            } else {
                model = load_model(build_model);
            }
            const RetrievalIndex index = build_index(data, model, static_cast<std::uint8_t>(float_width));
            save_index(index, build_out);
            out << "indexed " << index.size() << " slides (m " << index.m() << ", dim " << index.dim() << ")\n";
        } else if (query->parsed()) {
            const int sources = int(!q_id.empty()) + int(!q_pemb.empty()) + int(!q_text.empty());
            if (sources != 1) throw UsageError("query needs exactly one of --id, --pemb, --text");
            if ((!q_pemb.empty() || !q_text.empty()) && q_model.empty()) {
                throw UsageError("--pemb and --text queries need --model");
            }
            fusion.normalize = !no_normalize;
            const RetrievalIndex index = load_index(q_index);
            if (!q_text.empty()) {
                const EncoderModel model = load_model(q_model);
                const SemanticVector t = embed_text(q_text, HashTextEmbedder(model.dim()), model);
                print_ranked(out,
                             q_target == "image" ? query_text_to_image(t, index, fusion.top_k)
                                                 : query_text_to_text(t, index, fusion.top_k),
                             fmt);
            } else {
                QuerySlide q;
                if (!q_id.empty()) {
                    const auto at = index.find(q_id);
                    if (!at) throw PreconditionError("no record with id " + q_id);
                    const SlideRecord& rec = index.records()[*at];
                    q = {rec.mosaic_code, rec.semantic, rec.id};
                } else {
                    const EncoderModel model = load_model(q_model);
                    const SlideEncoding enc = encode_slide(read_patches(q_pemb), model);
                    q = {binarize(enc.mosaics), enc.semantic, std::nullopt};
                }
                if (q_target == "text") {
                    print_ranked(out, query_image_to_text(q.semantic, index, fusion.top_k, q.id), fmt);
                } else {
                    print_results(out, query_image(q, index, fusion), fmt);
                }
            }
        } else if (eval_cmd->parsed()) {
            if (e_index.empty() && e_rankings.empty() && e_raters.empty() && e_mcnemar.empty()) {
                throw UsageError("eval needs --index, --rankings, --raters or --mcnemar");
            }
            std::vector<std::pair<std::string, double>> metrics;
            if (!e_index.empty()) {
                e_fusion.normalize = !e_no_normalize;
                const RetrievalIndex index = load_index(e_index);
                std::unordered_map<std::string, int> labels;
                if (!e_labels.empty()) labels = load_labels_csv(e_labels);
                const auto* label_ptr = e_labels.empty() ? nullptr : &labels;
                const LeaveOneOutRun run = evaluate_image_to_image(index, e_fusion, label_ptr);
                metrics.emplace_back("i2i_queries", static_cast<double>(run.suite.queries));
                metrics.emplace_back("i2i_acc@1", run.suite.acc_at_1);
                metrics.emplace_back("i2i_mv@3", run.suite.mv_at_3);
                metrics.emplace_back("i2i_mv@5", run.suite.mv_at_5);
                if (!e_rankings_out.empty()) write_text(e_rankings_out, rankings_to_csv(run.rows));
                if (e_text) {
                    const LeaveOneOutRun t = evaluate_text_to_image(index, 5, label_ptr);
                    metrics.emplace_back("t2i_acc@1", t.suite.acc_at_1);
                    metrics.emplace_back("t2i_mv@3", t.suite.mv_at_3);
                    metrics.emplace_back("t2i_mv@5", t.suite.mv_at_5);
                }
            }
            if (!e_rankings.empty()) {
                const auto suite = accuracy_suite(rankings_from_rows(parse_rankings_csv(read_text_file(e_rankings))));
                metrics.emplace_back("acc@1", suite.acc_at_1);
                metrics.emplace_back("mv@3", suite.mv_at_3);
                metrics.emplace_back("mv@5", suite.mv_at_5);
            }
            if (!e_raters.empty()) {
                const AgreementReport rep = agreement_report(parse_rater_csv(read_text_file(e_raters)));
                if (rep.kappa) metrics.emplace_back("fleiss_kappa", *rep.kappa);
                else err << "fleiss_kappa: degenerate (all ratings in one category)\n";
                if (rep.mv_accuracy) metrics.emplace_back("panel_mv_accuracy", *rep.mv_accuracy);
                const auto& c = rep.consistency;
                for (std::size_t k = 2; k <= c.n_raters; ++k) {
                    metrics.emplace_back("consistency_" + std::to_string(k) + "/" + std::to_string(c.n_raters),
                                         c.at(k));
                }
                metrics.emplace_back("consistency_other", c.below(2));
            }
            if (!e_mcnemar.empty()) {
                const McNemarResult m = mcnemar(e_mcnemar[0], e_mcnemar[1]);
                metrics.emplace_back("mcnemar_statistic", m.statistic);
                metrics.emplace_back("mcnemar_p", m.p_value);
                metrics.emplace_back("mcnemar_exact", m.exact ? 1.0 : 0.0);
            }
            print_metrics(out, metrics, fmt);
        } else if (bench->parsed()) {
            scfg.seed = seed;
            const ScalingReport report = measure_scaling(scfg);
            for (const auto& note : report.notes) err << "note: " << note << '\n';
            const std::string csv = scaling_to_csv(report.rows);
            if (b_out.empty()) out << csv;
            else write_text(b_out, csv);
            if (!b_plot.empty()) {
                std::vector<std::uint64_t> sizes = scfg.pathsearch_sizes;
                write_text(b_plot, analytic_curves_csv(sizes, {100, 1000, 10000}, {0.05, 0.10, 0.15}, scfg.m,
                                                       scfg.dim, budget));
            }
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kData;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kData;
    } catch (const std::bad_alloc&) {
        err << "error: out of memory\n";
        return kData;
    }
    return kOk;
}

}  // namespace pathsearch::cli
