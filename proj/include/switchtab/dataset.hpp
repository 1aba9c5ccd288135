#pragma once

// Schema-typed tabular datasets loaded from CSV.

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "switchtab/csv.hpp"
#include "switchtab/error.hpp"

namespace switchtab {

enum class ColumnKind { numerical, categorical, label };
enum class TaskKind { none, binary, multiclass, regression };

inline std::string to_string(ColumnKind k) {
    switch (k) {
        case ColumnKind::numerical: return "numerical";
        case ColumnKind::categorical: return "categorical";
        case ColumnKind::label: return "label";
    }
    return "?";
}

inline std::string to_string(TaskKind t) {
    switch (t) {
        case TaskKind::none: return "none";
        case TaskKind::binary: return "binary";
        case TaskKind::multiclass: return "multiclass";
        case TaskKind::regression: return "regression";
    }
    return "?";
}

struct ColumnSchema {
    std::string name;
    ColumnKind kind = ColumnKind::numerical;
    TaskKind task = TaskKind::none;  // label columns only
    std::size_t classes = 0;         // multiclass label columns

    bool operator==(const ColumnSchema&) const = default;
};

inline void validate_schema(const std::vector<ColumnSchema>& schema) {
    if (schema.empty()) throw DataError("schema has no columns");
    std::set<std::string> names;
    std::size_t labels = 0;
    for (const auto& col : schema) {
        if (!names.insert(col.name).second)
            throw DataError("duplicate column name: " + col.name);
        if (col.kind == ColumnKind::label) {
            ++labels;
            if (col.task == TaskKind::none)
                throw DataError("label column " + col.name + " needs a task");
            if (col.task == TaskKind::multiclass && col.classes < 2)
                throw DataError("multiclass label " + col.name + " needs classes >= 2");
        } else if (col.task != TaskKind::none) {
            throw DataError("non-label column " + col.name + " cannot carry a task");
        }
    }
    if (labels > 1) throw DataError("at most one label column is allowed");
}

// Raw cells, column-major. Numerical columns (and regression labels) live in
// `numbers`; categorical columns and classification labels live in `texts`.
struct Column {
    ColumnSchema schema;
    std::vector<std::optional<double>> numbers;
    std::vector<std::optional<std::string>> texts;

    bool numeric_storage() const {
        return schema.kind == ColumnKind::numerical ||
               (schema.kind == ColumnKind::label && schema.task == TaskKind::regression);
    }
};

struct TabularDataset {
    std::vector<Column> columns;
    std::size_t n_rows = 0;

    std::vector<ColumnSchema> schema() const {
        std::vector<ColumnSchema> s;
        s.reserve(columns.size());
        for (const auto& c : columns) s.push_back(c.schema);
        return s;
    }

    const Column* label_column() const {
        for (const auto& c : columns)
            if (c.schema.kind == ColumnKind::label) return &c;
        return nullptr;
    }
};

// --------------------------------------------------------------------------
// schema JSON: { "columns": [ {"name", "kind", "task"?, "classes"?} ] }

inline std::vector<ColumnSchema> schema_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("columns"))
        throw DataError("schema file: expected an object with a \"columns\" array");
    for (const auto& [key, _] : doc.items())
        if (key != "columns") throw DataError("schema file: unknown key \"" + key + "\"");
    std::vector<ColumnSchema> schema;
    for (const auto& entry : doc.at("columns")) {
        ColumnSchema col;
        for (const auto& [key, _] : entry.items())
            if (key != "name" && key != "kind" && key != "task" && key != "classes")
                throw DataError("schema file: unknown column key \"" + key + "\"");
        col.name = entry.at("name").get<std::string>();
        const std::string kind = entry.at("kind").get<std::string>();
        if (kind == "numerical") col.kind = ColumnKind::numerical;
        else if (kind == "categorical") col.kind = ColumnKind::categorical;
        else if (kind == "label") col.kind = ColumnKind::label;
        else throw DataError("schema file: unknown kind \"" + kind + "\"");
        if (entry.contains("task")) {
            const std::string task = entry.at("task").get<std::string>();
            if (task == "binary") col.task = TaskKind::binary;
            else if (task == "multiclass") col.task = TaskKind::multiclass;
            else if (task == "regression") col.task = TaskKind::regression;
            else throw DataError("schema file: unknown task \"" + task + "\"");
        }
        if (entry.contains("classes")) col.classes = entry.at("classes").get<std::size_t>();
        if (col.task == TaskKind::binary) col.classes = 2;
        schema.push_back(std::move(col));
    }
    validate_schema(schema);
    return schema;
}

inline nlohmann::json schema_to_json(const std::vector<ColumnSchema>& schema) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& col : schema) {
        nlohmann::json entry{{"name", col.name}, {"kind", to_string(col.kind)}};
        if (col.kind == ColumnKind::label) {
            entry["task"] = to_string(col.task);
            if (col.task == TaskKind::multiclass) entry["classes"] = col.classes;
        }
        cols.push_back(std::move(entry));
    }
    return nlohmann::json{{"columns", cols}};
}

inline std::vector<ColumnSchema> load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schema file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("schema file " + path + ": " + e.what());
    }
    return schema_from_json(doc);
}

// --------------------------------------------------------------------------
// load_csv

struct LoadOptions {
    std::vector<std::string> missing_tokens{"", "NA", "NaN", "null"};
};

inline TabularDataset dataset_from_rows(const std::vector<std::vector<std::string>>& rows,
                                        const std::vector<ColumnSchema>& schema,
                                        const LoadOptions& options = {}) {
    validate_schema(schema);
    if (rows.empty()) throw DataError("empty file: no header row");
    const auto& header = rows.front();
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);

    TabularDataset data;
    std::vector<std::size_t> file_index;
    for (const auto& col : schema) {
        auto it = position.find(col.name);
        if (it == position.end()) throw DataError("column not found: " + col.name);
        file_index.push_back(it->second);
        data.columns.push_back(Column{col, {}, {}});
    }

    data.n_rows = rows.size() - 1;
    if (data.n_rows == 0) throw DataError("no data rows");

    auto is_missing = [&options](const std::string& cell) {
        for (const auto& tok : options.missing_tokens)
            if (cell == tok) return true;
        return false;
    };

    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& record = rows[r];
        for (std::size_t c = 0; c < schema.size(); ++c) {
            Column& col = data.columns[c];
            const std::size_t pos = file_index[c];
            // short records behave as if trailing cells were empty
            const std::string cell = pos < record.size() ? record[pos] : std::string();
            if (is_missing(cell)) {
                if (col.numeric_storage()) col.numbers.push_back(std::nullopt);
                else col.texts.push_back(std::nullopt);
                continue;
            }
            if (col.numeric_storage()) {
                double v;
                if (!parse_double(cell, v))
                    throw DataError("row " + std::to_string(r) + ", column " +
                                    col.schema.name + ": cannot parse \"" + cell +
                                    "\" as a number");
                col.numbers.push_back(v);
            } else {
                col.texts.push_back(cell);
            }
        }
    }
    return data;
}

inline TabularDataset load_csv(const std::string& path,
                               const std::vector<ColumnSchema>& schema,
                               const LoadOptions& options = {}) {
    return dataset_from_rows(csv::read_file(path), schema, options);
}

inline TabularDataset subset(const TabularDataset& data, const std::vector<std::size_t>& rows) {
    TabularDataset out;
    out.n_rows = rows.size();
    if (rows.empty()) throw DataError("subset: no rows selected");
    for (const Column& col : data.columns) {
        Column copy{col.schema, {}, {}};
        for (std::size_t r : rows) {
            if (r >= data.n_rows) throw DataError("subset: row index out of range");
            if (col.numeric_storage()) copy.numbers.push_back(col.numbers[r]);
            else copy.texts.push_back(col.texts[r]);
        }
        out.columns.push_back(std::move(copy));
    }
    return out;
}

}  // namespace switchtab
