#pragma once

// Fit/transform preprocessing: mean/mode imputation, backward-difference
// contrast coding for categoricals, min-max scaling of every derived column
// to [0,1]. Fitted on training rows only; transform never re-estimates.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "switchtab/dataset.hpp"
#include "switchtab/error.hpp"

namespace switchtab {

struct NumericStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct CategoricalStats {
    std::vector<std::string> levels;  // first-appearance order over training rows
    std::size_t mode_index = 0;       // most frequent; ties resolved to the earliest level
    std::vector<double> contrast;     // k x (k-1), row-major, one row per level
};

struct ScaledColumn {
    std::string name;
    double min = 0.0;  // pre-scaling extrema of the derived column on training rows
    double max = 0.0;
};

struct LabelEncoding {
    TaskKind task = TaskKind::none;
    std::vector<std::string> classes;  // classification levels, first-appearance order
    std::size_t n_classes = 0;
};

// Backward difference coding: level i of k maps to row i of a k x (k-1)
// matrix with entry(i,j) = -(k-1-j)/k for i <= j and (j+1)/k otherwise
// (0-indexed). Adjacent levels differ by exactly one contrast column.
inline std::vector<double> backward_difference_matrix(std::size_t k) {
    std::vector<double> m(k * (k - 1));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j + 1 < k; ++j)
            m[i * (k - 1) + j] = i <= j
                                     ? -static_cast<double>(k - 1 - j) / static_cast<double>(k)
                                     : static_cast<double>(j + 1) / static_cast<double>(k);
    return m;
}

struct FeatureMatrix {
    std::size_t n = 0;
    std::size_t M = 0;
    std::vector<double> values;  // n x M row-major, every entry in [0,1]
    std::vector<std::string> column_names;
    std::optional<std::vector<double>> labels;  // class index or regression target
    TaskKind task = TaskKind::none;
    std::size_t n_classes = 0;
    std::vector<std::vector<double>> pools;  // per column: sorted distinct training values

    double at(std::size_t r, std::size_t c) const { return values[r * M + c]; }

    std::vector<int> labels_as_int() const {
        if (!labels) throw DataError("matrix has no labels");
        std::vector<int> out;
        out.reserve(labels->size());
        for (double v : *labels) out.push_back(static_cast<int>(v));
        return out;
    }
};

class Preprocessor {
public:
    struct ColumnRule {
        ColumnSchema schema;
        bool dropped = false;
        NumericStats numeric;
        CategoricalStats categorical;
    };

    static Preprocessor fit(const TabularDataset& train) {
        if (train.n_rows == 0) throw DataError("cannot fit a preprocessor on zero rows");
        Preprocessor prep;
        prep.schema_ = train.schema();

        for (const Column& col : train.columns) {
            ColumnRule rule;
            rule.schema = col.schema;
            if (col.schema.kind == ColumnKind::label) {
                prep.fit_label(col);
            } else if (col.schema.kind == ColumnKind::numerical) {
                fit_numeric(col, rule);
            } else {
                fit_categorical(col, rule);
            }
            if (rule.dropped && col.schema.kind != ColumnKind::label)
                prep.dropped_.push_back(col.schema.name);
            prep.rules_.push_back(std::move(rule));
        }

        // derived column list, then extrema of the unscaled encoding on train
        for (const ColumnRule& rule : prep.rules_) {
            if (rule.dropped || rule.schema.kind == ColumnKind::label) continue;
            if (rule.schema.kind == ColumnKind::numerical) {
                prep.outputs_.push_back({rule.schema.name, 0.0, 0.0});
            } else {
                const std::size_t k = rule.categorical.levels.size();
                for (std::size_t j = 0; j + 1 < k; ++j)
                    prep.outputs_.push_back(
                        {rule.schema.name + "__bd" + std::to_string(j), 0.0, 0.0});
            }
        }
        if (prep.outputs_.empty()) throw DataError("all feature columns were dropped");

        std::vector<double> encoded = prep.encode_unscaled(train);
        const std::size_t m = prep.outputs_.size();
        for (std::size_t c = 0; c < m; ++c) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            for (std::size_t r = 0; r < train.n_rows; ++r) {
                lo = std::min(lo, encoded[r * m + c]);
                hi = std::max(hi, encoded[r * m + c]);
            }
            prep.outputs_[c].min = lo;
            prep.outputs_[c].max = hi;
        }

        // corruption pools: distinct values of the scaled training matrix
        prep.pools_.assign(m, {});
        for (std::size_t c = 0; c < m; ++c) {
            std::vector<double> vals;
            vals.reserve(train.n_rows);
            for (std::size_t r = 0; r < train.n_rows; ++r)
                vals.push_back(prep.scale_value(c, encoded[r * m + c]));
            std::sort(vals.begin(), vals.end());
            vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
            prep.pools_[c] = std::move(vals);
        }
        return prep;
    }

    FeatureMatrix transform(const TabularDataset& data) const {
        if (data.schema() != schema_)
            throw DataError("dataset schema does not match the fitted preprocessor");
        FeatureMatrix out;
        out.n = data.n_rows;
        out.M = outputs_.size();
        for (const auto& o : outputs_) out.column_names.push_back(o.name);
        out.values = encode_unscaled(data);
        for (std::size_t r = 0; r < out.n; ++r)
            for (std::size_t c = 0; c < out.M; ++c)
                out.values[r * out.M + c] = scale_value(c, out.values[r * out.M + c]);
        out.pools = pools_;

        if (const Column* label = data.label_column()) {
            out.task = label_.task;
            out.n_classes = label_.n_classes;
            std::vector<double> ys;
            ys.reserve(data.n_rows);
            if (label_.task == TaskKind::regression) {
                for (std::size_t r = 0; r < data.n_rows; ++r) {
                    if (!label->numbers[r])
                        throw DataError("missing regression target at row " + std::to_string(r));
                    ys.push_back(*label->numbers[r]);
                }
            } else {
                std::unordered_map<std::string, std::size_t> index;
                for (std::size_t i = 0; i < label_.classes.size(); ++i)
                    index.emplace(label_.classes[i], i);
                for (std::size_t r = 0; r < data.n_rows; ++r) {
                    if (!label->texts[r])
                        throw DataError("missing label at row " + std::to_string(r));
                    auto it = index.find(*label->texts[r]);
                    if (it == index.end())
                        throw DataError("label class \"" + *label->texts[r] +
                                        "\" was not seen during fitting");
                    ys.push_back(static_cast<double>(it->second));
                }
            }
            out.labels = std::move(ys);
        }
        return out;
    }

    const std::vector<ColumnSchema>& schema() const { return schema_; }
    const std::vector<std::string>& dropped_columns() const { return dropped_; }
    const std::vector<ScaledColumn>& output_columns() const { return outputs_; }
    const std::vector<ColumnRule>& rules() const { return rules_; }
    const LabelEncoding& label() const { return label_; }
    const std::vector<std::vector<double>>& pools() const { return pools_; }

    // serialization support
    std::vector<ColumnSchema>& mutable_schema() { return schema_; }
    std::vector<ColumnRule>& mutable_rules() { return rules_; }
    std::vector<std::string>& mutable_dropped() { return dropped_; }
    std::vector<ScaledColumn>& mutable_outputs() { return outputs_; }
    LabelEncoding& mutable_label() { return label_; }
    std::vector<std::vector<double>>& mutable_pools() { return pools_; }

private:
    static void fit_numeric(const Column& col, ColumnRule& rule) {
        double sum = 0.0;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        std::size_t count = 0;
        for (const auto& cell : col.numbers) {
            if (!cell) continue;
            sum += *cell;
            lo = std::min(lo, *cell);
            hi = std::max(hi, *cell);
            ++count;
        }
        if (count == 0) {
            rule.dropped = true;  // missing for all samples
            return;
        }
        rule.numeric = {sum / static_cast<double>(count), lo, hi};
    }

    static void fit_categorical(const Column& col, ColumnRule& rule) {
        std::vector<std::string> levels;
        std::unordered_map<std::string, std::size_t> counts;
        for (const auto& cell : col.texts) {
            if (!cell) continue;
            auto [it, inserted] = counts.emplace(*cell, 0);
            if (inserted) levels.push_back(*cell);
            ++it->second;
        }
        if (levels.empty() || levels.size() == 1) {
            // fully missing, or a single level that encodes to zero columns
            rule.dropped = true;
            return;
        }
        std::size_t mode = 0;
        for (std::size_t i = 1; i < levels.size(); ++i)
            if (counts[levels[i]] > counts[levels[mode]]) mode = i;
        rule.categorical.levels = std::move(levels);
        rule.categorical.mode_index = mode;
        rule.categorical.contrast = backward_difference_matrix(rule.categorical.levels.size());
    }

    void fit_label(const Column& col) {
        label_.task = col.schema.task;
        if (label_.task == TaskKind::regression) {
            label_.n_classes = 0;
            return;
        }
        std::unordered_map<std::string, std::size_t> seen;
        for (const auto& cell : col.texts) {
            if (!cell) throw DataError("label column has missing entries");
            if (seen.emplace(*cell, label_.classes.size()).second)
                label_.classes.push_back(*cell);
        }
        const std::size_t declared =
            col.schema.task == TaskKind::binary ? 2 : col.schema.classes;
        if (label_.classes.size() > declared)
            throw DataError("label column has more classes than the schema declares");
        label_.n_classes = declared;
    }

    // impute + contrast-encode, no scaling
    std::vector<double> encode_unscaled(const TabularDataset& data) const {
        const std::size_t m = outputs_.size();
        std::vector<double> out(data.n_rows * m);
        std::size_t c0 = 0;
        for (std::size_t ci = 0; ci < rules_.size(); ++ci) {
            const ColumnRule& rule = rules_[ci];
            if (rule.dropped || rule.schema.kind == ColumnKind::label) continue;
            const Column& col = data.columns[ci];
            if (rule.schema.kind == ColumnKind::numerical) {
                for (std::size_t r = 0; r < data.n_rows; ++r)
                    out[r * m + c0] = col.numbers[r].value_or(rule.numeric.mean);
                c0 += 1;
            } else {
                const auto& cat = rule.categorical;
                const std::size_t k = cat.levels.size();
                std::unordered_map<std::string, std::size_t> index;
                for (std::size_t i = 0; i < k; ++i) index.emplace(cat.levels[i], i);
                for (std::size_t r = 0; r < data.n_rows; ++r) {
                    std::size_t level = cat.mode_index;  // missing and unseen alike
                    if (col.texts[r]) {
                        auto it = index.find(*col.texts[r]);
                        if (it != index.end()) level = it->second;
                    }
                    for (std::size_t j = 0; j + 1 < k; ++j)
                        out[r * m + c0 + j] = cat.contrast[level * (k - 1) + j];
                }
                c0 += k - 1;
            }
        }
        return out;
    }

    // min-max to [0,1]; constant training columns pin to the midpoint, values
    // outside the fitted range clip
    double scale_value(std::size_t column, double v) const {
        const ScaledColumn& sc = outputs_[column];
        if (sc.min == sc.max) return 0.5;
        const double scaled = (v - sc.min) / (sc.max - sc.min);
        return std::clamp(scaled, 0.0, 1.0);
    }

    std::vector<ColumnSchema> schema_;
    std::vector<ColumnRule> rules_;
    std::vector<std::string> dropped_;
    std::vector<ScaledColumn> outputs_;
    LabelEncoding label_;
    std::vector<std::vector<double>> pools_;
};

// Transformed-matrix export with the generated column names.
inline std::string matrix_to_csv(const FeatureMatrix& m) {
    std::string out;
    std::vector<std::string> header = m.column_names;
    if (m.labels) header.push_back("label");
    out += csv::to_line(header);
    for (std::size_t r = 0; r < m.n; ++r) {
        std::vector<std::string> fields;
        fields.reserve(m.M + 1);
        for (std::size_t c = 0; c < m.M; ++c) fields.push_back(format_double(m.at(r, c)));
        if (m.labels) fields.push_back(format_double((*m.labels)[r]));
        out += csv::to_line(fields);
    }
    return out;
}

}  // namespace switchtab
