#pragma once

// Checkpoint files: a single JSON document carrying the model config, the
// fitted preprocessor, the training config, a schema digest, and every
// parameter at full round-trip precision. Keys are sorted and floats use
// shortest-exact formatting, so identical state means identical bytes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "switchtab/dataset.hpp"
#include "switchtab/error.hpp"
#include "switchtab/model.hpp"
#include "switchtab/preprocess.hpp"
#include "switchtab/train.hpp"

namespace switchtab {

inline constexpr int kCheckpointFormatVersion = 1;

// Order-sensitive FNV-1a digest of column names, kinds and tasks.
inline std::string schema_hash(const std::vector<ColumnSchema>& schema) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0x1f;
        h *= 1099511628211ull;
    };
    for (const auto& col : schema) {
        mix(col.name);
        mix(to_string(col.kind));
        mix(to_string(col.task));
        mix(std::to_string(col.classes));
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline TaskKind task_from_string(const std::string& s) {
    if (s == "none") return TaskKind::none;
    if (s == "binary") return TaskKind::binary;
    if (s == "multiclass") return TaskKind::multiclass;
    if (s == "regression") return TaskKind::regression;
    throw DataError("unknown task: " + s);
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"feature_dim", c.feature_dim}, {"d_model", c.d_model},
            {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},               {"d_e", c.d_e},
            {"task", to_string(c.task)},    {"n_classes", c.n_classes},
            {"head_hidden", c.head_hidden}, {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.d_e = j.at("d_e").get<std::size_t>();
    c.task = task_from_string(j.at("task").get<std::string>());
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.head_hidden = j.at("head_hidden").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"ratio", c.ratio},
            {"batch_size", c.batch_size},
            {"pretrain_epochs", c.pretrain_epochs},
            {"pretrain_lr", c.pretrain_lr},
            {"alpha", c.alpha},
            {"finetune_epochs", c.finetune_epochs},
            {"finetune_lr", c.finetune_lr},
            {"patience", c.patience},
            {"seed", c.seed},
            {"switching", c.switching},
            {"label_assisted", c.label_assisted},
            {"train_fraction", c.train_fraction}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.ratio = j.at("ratio").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.pretrain_epochs = j.at("pretrain_epochs").get<std::size_t>();
    c.pretrain_lr = j.at("pretrain_lr").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.finetune_epochs = j.at("finetune_epochs").get<std::size_t>();
    c.finetune_lr = j.at("finetune_lr").get<double>();
    c.patience = j.at("patience").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.switching = j.at("switching").get<bool>();
    c.label_assisted = j.at("label_assisted").get<bool>();
    c.train_fraction = j.at("train_fraction").get<double>();
    return c;
}

namespace detail {

inline nlohmann::json preprocessor_to_json(const Preprocessor& p) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& rule : p.rules()) {
        nlohmann::json entry{{"name", rule.schema.name},
                             {"kind", to_string(rule.schema.kind)},
                             {"dropped", rule.dropped}};
        if (rule.schema.kind == ColumnKind::numerical && !rule.dropped) {
            entry["numeric"] = {{"mean", rule.numeric.mean},
                                {"min", rule.numeric.min},
                                {"max", rule.numeric.max}};
        } else if (rule.schema.kind == ColumnKind::categorical && !rule.dropped) {
            entry["categorical"] = {{"levels", rule.categorical.levels},
                                    {"mode_index", rule.categorical.mode_index}};
        }
        rules.push_back(std::move(entry));
    }
    nlohmann::json outputs = nlohmann::json::array();
    for (const auto& o : p.output_columns())
        outputs.push_back({{"name", o.name}, {"min", o.min}, {"max", o.max}});
    return {{"schema", schema_to_json(p.schema())},
            {"rules", rules},
            {"dropped", p.dropped_columns()},
            {"outputs", outputs},
            {"label",
             {{"task", to_string(p.label().task)},
              {"classes", p.label().classes},
              {"n_classes", p.label().n_classes}}},
            {"pools", p.pools()}};
}

inline Preprocessor preprocessor_from_json(const nlohmann::json& j) {
    Preprocessor p;
    p.mutable_schema() = schema_from_json(j.at("schema"));
    const auto& rules = j.at("rules");
    for (std::size_t i = 0; i < p.mutable_schema().size(); ++i) {
        Preprocessor::ColumnRule rule;
        rule.schema = p.mutable_schema()[i];
        const auto& entry = rules.at(i);
        if (entry.at("name").get<std::string>() != rule.schema.name)
            throw CheckpointError("preprocessor rules out of order");
        rule.dropped = entry.at("dropped").get<bool>();
        if (entry.contains("numeric")) {
            rule.numeric.mean = entry.at("numeric").at("mean").get<double>();
            rule.numeric.min = entry.at("numeric").at("min").get<double>();
            rule.numeric.max = entry.at("numeric").at("max").get<double>();
        }
        if (entry.contains("categorical")) {
            rule.categorical.levels =
                entry.at("categorical").at("levels").get<std::vector<std::string>>();
            rule.categorical.mode_index =
                entry.at("categorical").at("mode_index").get<std::size_t>();
            rule.categorical.contrast =
                backward_difference_matrix(rule.categorical.levels.size());
        }
        p.mutable_rules().push_back(std::move(rule));
    }
    p.mutable_dropped() = j.at("dropped").get<std::vector<std::string>>();
    for (const auto& o : j.at("outputs"))
        p.mutable_outputs().push_back({o.at("name").get<std::string>(),
                                       o.at("min").get<double>(), o.at("max").get<double>()});
    p.mutable_label().task = task_from_string(j.at("label").at("task").get<std::string>());
    p.mutable_label().classes = j.at("label").at("classes").get<std::vector<std::string>>();
    p.mutable_label().n_classes = j.at("label").at("n_classes").get<std::size_t>();
    p.mutable_pools() = j.at("pools").get<std::vector<std::vector<double>>>();
    return p;
}

}  // namespace detail

struct Checkpoint {
    std::string phase;  // "pretrained" or "finetuned"
    ModelConfig model_config;
    TrainConfig train_config;
    Preprocessor preprocessor;
    std::string schema_digest;
    SwitchTabModel model;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
    nlohmann::json params;
    for (const Tensor& p : c.model.parameters())
        params[p.name()] = {{"shape", p.shape()}, {"values", p.values()}};
    return {{"format_version", kCheckpointFormatVersion},
            {"kind", "switchtab-checkpoint"},
            {"phase", c.phase},
            {"schema_hash", c.schema_digest},
            {"model_config", model_config_to_json(c.model_config)},
            {"train_config", train_config_to_json(c.train_config)},
            {"preprocessor", detail::preprocessor_to_json(c.preprocessor)},
            {"params", params}};
}

// Write to a temporary file in the same directory, then rename: readers
// never observe a partial checkpoint.
inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint: " + tmp);
        out << checkpoint_to_json(c).dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint " + path + ": " + e.what());
    }
    try {
        if (doc.at("kind").get<std::string>() != "switchtab-checkpoint")
            throw CheckpointError("not a checkpoint file: " + path);
        const int version = doc.at("format_version").get<int>();
        if (version > kCheckpointFormatVersion)
            throw CheckpointError("checkpoint format " + std::to_string(version) +
                                  " is newer than this build supports");
        Checkpoint c;
        c.phase = doc.at("phase").get<std::string>();
        c.model_config = model_config_from_json(doc.at("model_config"));
        c.train_config = train_config_from_json(doc.at("train_config"));
        c.preprocessor = detail::preprocessor_from_json(doc.at("preprocessor"));
        c.schema_digest = doc.at("schema_hash").get<std::string>();
        c.model = SwitchTabModel::init(c.model_config);
        const auto& params = doc.at("params");
        for (Tensor p : c.model.parameters()) {
            const auto& entry = params.at(p.name());
            if (entry.at("shape").get<std::vector<std::size_t>>() != p.shape())
                throw CheckpointError("parameter " + p.name() + " has the wrong shape");
            p.mutable_values() = entry.at("values").get<std::vector<double>>();
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint " + path + ": " + e.what());
    }
}

}  // namespace switchtab
