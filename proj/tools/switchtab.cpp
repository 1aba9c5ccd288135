// switchtab command line: dataset synthesis, pre-training, fine-tuning,
// embedding export, metric evaluation, 2D projection, gradient checking.
//
// Exit codes: 0 success, 1 usage or data error, 2 schema mismatch between a
// checkpoint and the data at hand, 3 unreadable/corrupt checkpoint.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "switchtab/checkpoint.hpp"
#include "switchtab/corruption.hpp"
#include "switchtab/csv.hpp"
#include "switchtab/dataset.hpp"
#include "switchtab/error.hpp"
#include "switchtab/eval.hpp"
#include "switchtab/gradcheck_suite.hpp"
#include "switchtab/model.hpp"
#include "switchtab/preprocess.hpp"
#include "switchtab/synth.hpp"
#include "switchtab/train.hpp"

namespace st = switchtab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw st::DataError("config: unknown key \"" + key + "\" in " + where);
    }
}

struct RunConfig {
    std::string csv_path;
    std::string schema_path;
    std::string out_dir = "out";
    std::string checkpoint_path;
    std::string predictions_path;
    std::string metric = "auc";
    st::TrainConfig train;
    // model overrides; feature_dim/task/classes always come from the data
    std::size_t d_model = 32;
    std::size_t n_layers = 3;
    std::size_t n_heads = 2;
    std::size_t d_ff = 64;
    std::size_t d_e = 0;
    std::size_t head_hidden = 0;
    std::optional<std::uint64_t> model_seed;
    st::SynthSpec synth;
};

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw st::DataError("cannot open config file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw st::DataError("config file " + path + ": " + e.what());
    }
    reject_unknown(doc, {"data", "model", "train", "out_dir", "checkpoint", "predictions",
                         "metric", "synth"}, "top level");
    if (doc.contains("data")) {
        const auto& d = doc["data"];
        reject_unknown(d, {"csv", "schema"}, "data");
        if (d.contains("csv")) cfg.csv_path = d["csv"].get<std::string>();
        if (d.contains("schema")) cfg.schema_path = d["schema"].get<std::string>();
    }
    if (doc.contains("model")) {
        const auto& m = doc["model"];
        reject_unknown(m, {"d_model", "n_layers", "n_heads", "d_ff", "d_e", "head_hidden",
                           "seed"}, "model");
        if (m.contains("d_model")) cfg.d_model = m["d_model"].get<std::size_t>();
        if (m.contains("n_layers")) cfg.n_layers = m["n_layers"].get<std::size_t>();
        if (m.contains("n_heads")) cfg.n_heads = m["n_heads"].get<std::size_t>();
        if (m.contains("d_ff")) cfg.d_ff = m["d_ff"].get<std::size_t>();
        if (m.contains("d_e")) cfg.d_e = m["d_e"].get<std::size_t>();
        if (m.contains("head_hidden")) cfg.head_hidden = m["head_hidden"].get<std::size_t>();
        if (m.contains("seed")) cfg.model_seed = m["seed"].get<std::uint64_t>();
    }
    if (doc.contains("train")) {
        const auto& t = doc["train"];
        reject_unknown(t, {"ratio", "batch_size", "pretrain_epochs", "pretrain_lr", "alpha",
                           "finetune_epochs", "finetune_lr", "patience", "seed", "switching",
                           "label_assisted", "train_fraction"}, "train");
        if (t.contains("ratio")) cfg.train.ratio = t["ratio"].get<double>();
        if (t.contains("batch_size")) cfg.train.batch_size = t["batch_size"].get<std::size_t>();
        if (t.contains("pretrain_epochs"))
            cfg.train.pretrain_epochs = t["pretrain_epochs"].get<std::size_t>();
        if (t.contains("pretrain_lr")) cfg.train.pretrain_lr = t["pretrain_lr"].get<double>();
        if (t.contains("alpha")) cfg.train.alpha = t["alpha"].get<double>();
        if (t.contains("finetune_epochs"))
            cfg.train.finetune_epochs = t["finetune_epochs"].get<std::size_t>();
        if (t.contains("finetune_lr")) cfg.train.finetune_lr = t["finetune_lr"].get<double>();
        if (t.contains("patience")) cfg.train.patience = t["patience"].get<std::size_t>();
        if (t.contains("seed")) cfg.train.seed = t["seed"].get<std::uint64_t>();
        if (t.contains("switching")) cfg.train.switching = t["switching"].get<bool>();
        if (t.contains("label_assisted"))
            cfg.train.label_assisted = t["label_assisted"].get<bool>();
        if (t.contains("train_fraction"))
            cfg.train.train_fraction = t["train_fraction"].get<double>();
    }
    if (doc.contains("out_dir")) cfg.out_dir = doc["out_dir"].get<std::string>();
    if (doc.contains("checkpoint")) cfg.checkpoint_path = doc["checkpoint"].get<std::string>();
    if (doc.contains("predictions")) cfg.predictions_path = doc["predictions"].get<std::string>();
    if (doc.contains("metric")) cfg.metric = doc["metric"].get<std::string>();
    if (doc.contains("synth")) {
        const auto& s = doc["synth"];
        reject_unknown(s, {"n", "class_dims", "shared_dims", "separation", "noise", "seed"},
                       "synth");
        if (s.contains("n")) cfg.synth.n = s["n"].get<std::size_t>();
        if (s.contains("class_dims")) cfg.synth.class_dims = s["class_dims"].get<std::size_t>();
        if (s.contains("shared_dims"))
            cfg.synth.shared_dims = s["shared_dims"].get<std::size_t>();
        if (s.contains("separation")) cfg.synth.separation = s["separation"].get<double>();
        if (s.contains("noise")) cfg.synth.noise = s["noise"].get<double>();
        if (s.contains("seed")) cfg.synth.seed = s["seed"].get<std::uint64_t>();
    }
    return cfg;
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw st::DataError("config: missing " + what + " path");
    if (!fs::exists(path)) throw st::DataError(what + " does not exist: " + path);
}

st::TabularDataset load_data(const RunConfig& cfg, std::vector<st::ColumnSchema>& schema_out) {
    require_file(cfg.csv_path, "data csv");
    require_file(cfg.schema_path, "schema json");
    schema_out = st::load_schema(cfg.schema_path);
    return st::load_csv(cfg.csv_path, schema_out);
}

st::ModelConfig make_model_config(const RunConfig& cfg, const st::FeatureMatrix& matrix) {
    st::ModelConfig mcfg;
    mcfg.feature_dim = matrix.M;
    mcfg.d_model = cfg.d_model;
    mcfg.n_layers = cfg.n_layers;
    mcfg.n_heads = cfg.n_heads;
    mcfg.d_ff = cfg.d_ff;
    mcfg.d_e = cfg.d_e;
    mcfg.head_hidden = cfg.head_hidden;
    mcfg.task = matrix.task;
    mcfg.n_classes = matrix.n_classes;
    mcfg.seed = cfg.model_seed.value_or(cfg.train.seed);
    return mcfg;
}

void write_text(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw st::DataError("cannot write " + path.string());
    out << text;
}

// deterministic train/held-out row split
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(std::size_t n,
                                                                         double fraction,
                                                                         std::uint64_t seed) {
    st::Rng rng(seed);
    const auto perm = rng.permutation(n);
    const auto train_count = static_cast<std::size_t>(static_cast<double>(n) * fraction);
    if (train_count == 0 || train_count == n)
        throw st::DataError("train fraction leaves an empty split");
    return {{perm.begin(), perm.begin() + train_count},
            {perm.begin() + train_count, perm.end()}};
}

int cmd_synth(const RunConfig& cfg) {
    st::SynthData data = st::synthesize(cfg.synth);
    st::write_synth_files(data, cfg.out_dir);
    std::cout << "wrote " << (fs::path(cfg.out_dir) / "synth.csv").string() << " and "
              << (fs::path(cfg.out_dir) / "synth_schema.json").string() << "\n";
    return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
    std::vector<st::ColumnSchema> schema;
    st::TabularDataset data = load_data(cfg, schema);
    if (cfg.train.label_assisted && data.label_column() == nullptr)
        throw st::DataError(
            "label-assisted pre-training requires a \"label\" column; the schema declares none");

    auto [train_rows, holdout_rows] =
        split_rows(data.n_rows, cfg.train.train_fraction, cfg.train.seed);
    st::TabularDataset train_data = st::subset(data, train_rows);
    st::Preprocessor prep = st::Preprocessor::fit(train_data);
    st::FeatureMatrix matrix = prep.transform(train_data);
    st::ModelConfig mcfg = make_model_config(cfg, matrix);

    st::PretrainResult result = st::pretrain(matrix, cfg.train, mcfg);

    st::Checkpoint ck{"pretrained", mcfg, cfg.train, std::move(prep),
                      st::schema_hash(schema), std::move(result.model)};
    fs::create_directories(cfg.out_dir);
    st::save_checkpoint(ck, (fs::path(cfg.out_dir) / "checkpoint.json").string());
    write_text(fs::path(cfg.out_dir) / "pretrain_log.csv", result.log.to_csv());
    json split{{"train_rows", train_rows}, {"holdout_rows", holdout_rows}};
    write_text(fs::path(cfg.out_dir) / "split.json", split.dump(2) + "\n");
    std::cout << "wrote " << (fs::path(cfg.out_dir) / "checkpoint.json").string() << "\n";
    return 0;
}

st::Checkpoint load_checked_checkpoint(const RunConfig& cfg,
                                       const std::vector<st::ColumnSchema>& schema) {
    require_file(cfg.checkpoint_path, "checkpoint");
    st::Checkpoint ck = st::load_checkpoint(cfg.checkpoint_path);
    if (ck.schema_digest != st::schema_hash(schema))
        throw st::SchemaMismatchError("checkpoint was fitted on a different schema (hash " +
                                      ck.schema_digest + " vs " + st::schema_hash(schema) + ")");
    return ck;
}

int cmd_finetune(const RunConfig& cfg) {
    std::vector<st::ColumnSchema> schema;
    st::TabularDataset data = load_data(cfg, schema);
    st::Checkpoint ck = load_checked_checkpoint(cfg, schema);
    st::FeatureMatrix matrix = ck.preprocessor.transform(data);
    if (!matrix.labels) throw st::DataError("finetune: data has no label column");

    st::TrainConfig tcfg = cfg.train;
    st::FinetuneResult result = st::finetune(ck.model, matrix, tcfg);

    st::Checkpoint out{"finetuned", ck.model_config, tcfg, std::move(ck.preprocessor),
                       ck.schema_digest, std::move(result.model)};
    fs::create_directories(cfg.out_dir);
    st::save_checkpoint(out, (fs::path(cfg.out_dir) / "predictor.json").string());
    write_text(fs::path(cfg.out_dir) / "finetune_log.csv", result.log.to_csv());

    // validation predictions for the eval command
    st::Rng rng(tcfg.seed);
    const auto perm = rng.permutation(matrix.n);
    const auto train_count =
        static_cast<std::size_t>(static_cast<double>(matrix.n) * tcfg.train_fraction);
    std::vector<std::size_t> val_rows(perm.begin() + train_count, perm.end());
    st::Tensor z = out.model.encode(st::batch_tensor(matrix, val_rows));
    st::Tensor pred = out.model.predict(z, st::Head::finetune);
    std::string pred_csv = st::csv::to_line({"label", "score"});
    const bool classification =
        matrix.task == st::TaskKind::binary || matrix.task == st::TaskKind::multiclass;
    for (std::size_t i = 0; i < val_rows.size(); ++i) {
        double score;
        if (matrix.task == st::TaskKind::binary) {
            const double d = pred.at(i, 1) - pred.at(i, 0);
            score = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
        } else if (classification) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < pred.cols(); ++c)
                if (pred.at(i, c) > pred.at(i, best)) best = c;
            score = static_cast<double>(best);
        } else {
            score = pred.at(i, 0);
        }
        pred_csv += st::csv::to_line({st::format_double((*matrix.labels)[val_rows[i]]),
                                      st::format_double(score)});
    }
    write_text(fs::path(cfg.out_dir) / "val_predictions.csv", pred_csv);
    std::cout << "best validation metric: " << st::format_double(result.best_val_metric)
              << " (epoch " << result.best_epoch << ")\n";
    return 0;
}

int cmd_embed(const RunConfig& cfg) {
    std::vector<st::ColumnSchema> schema;
    st::TabularDataset data = load_data(cfg, schema);
    st::Checkpoint ck = load_checked_checkpoint(cfg, schema);
    st::FeatureMatrix matrix = ck.preprocessor.transform(data);
    st::EmbeddingTable table = st::embed(ck.model, matrix);
    fs::create_directories(cfg.out_dir);
    write_text(fs::path(cfg.out_dir) / "embeddings.csv", st::embedding_table_to_csv(table));
    std::cout << "wrote " << (fs::path(cfg.out_dir) / "embeddings.csv").string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    require_file(cfg.predictions_path, "predictions csv");
    const auto rows = st::csv::read_file(cfg.predictions_path);
    if (rows.size() < 2) throw st::DataError("predictions file has no data rows");
    std::size_t label_col = SIZE_MAX, score_col = SIZE_MAX;
    for (std::size_t c = 0; c < rows[0].size(); ++c) {
        if (rows[0][c] == "label") label_col = c;
        if (rows[0][c] == "score") score_col = c;
    }
    if (label_col == SIZE_MAX || score_col == SIZE_MAX)
        throw st::DataError("predictions file needs \"label\" and \"score\" columns");
    std::vector<double> scores, targets;
    std::vector<int> labels, classes;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        double label, score;
        if (!st::parse_double(rows[r][label_col], label) ||
            !st::parse_double(rows[r][score_col], score))
            throw st::DataError("predictions row " + std::to_string(r) + ": not numeric");
        targets.push_back(label);
        scores.push_back(score);
        labels.push_back(static_cast<int>(label));
        // accuracy treats the score as a class: probabilities round to the
        // nearest class index
        classes.push_back(static_cast<int>(std::lround(score)));
    }
    double value;
    if (cfg.metric == "auc") value = st::auc(scores, labels);
    else if (cfg.metric == "accuracy") value = st::accuracy(classes, labels);
    else if (cfg.metric == "rmse") value = st::rmse(scores, targets);
    else throw st::DataError("unknown metric: " + cfg.metric);
    json out{{"metric", cfg.metric}, {"value", value}, {"n", scores.size()}};
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_project(const RunConfig& cfg) {
    std::vector<st::ColumnSchema> schema;
    st::TabularDataset data = load_data(cfg, schema);
    st::Checkpoint ck = load_checked_checkpoint(cfg, schema);
    st::FeatureMatrix matrix = ck.preprocessor.transform(data);
    st::EmbeddingTable table = st::embed(ck.model, matrix);
    std::vector<std::string> groups;
    for (std::size_t i = 0; i < table.n; ++i)
        groups.push_back(table.labels ? st::format_double((*table.labels)[i]) : "all");

    fs::create_directories(cfg.out_dir);
    const char* names[2] = {"projection_s", "projection_m"};
    const std::vector<double>* sources[2] = {&table.s, &table.m};
    for (int which = 0; which < 2; ++which) {
        std::vector<std::vector<double>> rows;
        rows.reserve(table.n);
        for (std::size_t i = 0; i < table.n; ++i)
            rows.emplace_back(sources[which]->begin() + i * table.e_width,
                              sources[which]->begin() + (i + 1) * table.e_width);
        st::Pca2 p = st::pca2(rows);
        write_text(fs::path(cfg.out_dir) / (std::string(names[which]) + ".csv"),
                   st::projection_to_csv(p, groups));
        write_text(fs::path(cfg.out_dir) / (std::string(names[which]) + ".svg"),
                   st::projection_to_svg(p, groups));
    }
    std::cout << "wrote projections to " << cfg.out_dir << "\n";
    return 0;
}

int cmd_gradcheck(const RunConfig&) {
    bool ok = true;
    double worst = 0.0;
    auto ops = st::run_op_grad_checks(10);
    ops.push_back(st::run_full_loss_grad_check());
    for (const auto& check : ops) {
        std::cout << (check.passed ? "[pass] " : "[FAIL] ") << check.name
                  << " max_rel_err=" << st::format_double(check.max_rel_error) << "\n";
        ok = ok && check.passed;
        worst = std::max(worst, check.max_rel_error);
    }
    std::cout << "overall max_rel_err=" << st::format_double(worst) << "\n";
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SwitchTab: self-supervised tabular representation learning"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha, ratio;
    std::optional<std::string> out_dir;
    bool no_switch = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run-config JSON file");
        cmd->add_option("--seed", seed, "override the training seed");
        cmd->add_flag("--no-switch", no_switch, "disable switched-pair reconstruction");
        cmd->add_option("--alpha", alpha, "override the prediction-loss weight");
        cmd->add_option("--ratio", ratio, "override the corruption ratio");
        cmd->add_option("--out", out_dir, "override the output directory");
        return cmd;
    };

    auto* synth = add_common(app.add_subcommand("synth", "generate a synthetic dataset"));
    std::optional<std::size_t> synth_n, synth_class, synth_shared;
    std::optional<double> synth_sep, synth_noise;
    synth->add_option("--n", synth_n, "rows");
    synth->add_option("--class-dims", synth_class, "class-dependent dimensions");
    synth->add_option("--shared-dims", synth_shared, "class-independent dimensions");
    synth->add_option("--separation", synth_sep, "distance between class means");
    synth->add_option("--noise", synth_noise, "class-dimension standard deviation");

    auto* pretrain_cmd =
        add_common(app.add_subcommand("pretrain", "self-supervised pre-training"));
    auto* finetune_cmd = add_common(app.add_subcommand("finetune", "supervised fine-tuning"));
    auto* embed_cmd = add_common(app.add_subcommand("embed", "export z/s/m embeddings"));
    auto* eval_cmd = add_common(app.add_subcommand("eval", "compute a metric from predictions"));
    std::optional<std::string> metric_flag, pred_flag;
    eval_cmd->add_option("--metric", metric_flag, "accuracy | auc | rmse");
    eval_cmd->add_option("--pred", pred_flag, "predictions csv (label,score)");
    auto* project_cmd = add_common(app.add_subcommand("project", "2D PCA of s and m"));
    auto* gradcheck_cmd =
        add_common(app.add_subcommand("gradcheck", "finite-difference gradient verification"));

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_run_config(config_path);
        if (seed) {
            cfg.train.seed = *seed;
            cfg.synth.seed = *seed;
        }
        if (no_switch) cfg.train.switching = false;
        if (alpha) cfg.train.alpha = *alpha;
        if (ratio) cfg.train.ratio = *ratio;
        if (out_dir) cfg.out_dir = *out_dir;
        if (synth_n) cfg.synth.n = *synth_n;
        if (synth_class) cfg.synth.class_dims = *synth_class;
        if (synth_shared) cfg.synth.shared_dims = *synth_shared;
        if (synth_sep) cfg.synth.separation = *synth_sep;
        if (synth_noise) cfg.synth.noise = *synth_noise;
        if (metric_flag) cfg.metric = *metric_flag;
        if (pred_flag) cfg.predictions_path = *pred_flag;

        if (synth->parsed()) return cmd_synth(cfg);
        if (pretrain_cmd->parsed()) return cmd_pretrain(cfg);
        if (finetune_cmd->parsed()) return cmd_finetune(cfg);
        if (embed_cmd->parsed()) return cmd_embed(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg);
        if (project_cmd->parsed()) return cmd_project(cfg);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(cfg);
        return 1;
    } catch (const st::SchemaMismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const st::CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
