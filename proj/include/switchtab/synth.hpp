#pragma once

// Synthetic two-class dataset: some feature dimensions carry the class
// signal (Gaussians at +/- separation/2), the rest are shared noise drawn
// identically for both classes. Classes alternate row by row so any
// contiguous split stays balanced.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "switchtab/csv.hpp"
#include "switchtab/dataset.hpp"
#include "switchtab/error.hpp"
#include "switchtab/rng.hpp"

namespace switchtab {

struct SynthSpec {
    std::size_t n = 500;
    std::size_t class_dims = 4;
    std::size_t shared_dims = 4;
    double separation = 2.0;
    double noise = 0.3;
    std::uint64_t seed = 7;

    void validate() const {
        if (n < 4) throw DataError("synth: need at least 4 rows");
        if (class_dims < 1 || shared_dims < 1)
            throw DataError("synth: need at least one dimension of each kind");
        if (noise <= 0.0) throw DataError("synth: noise must be positive");
    }
};

struct SynthData {
    std::vector<ColumnSchema> schema;
    std::string csv_text;
};

inline SynthData synthesize(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SynthData out;
    std::vector<std::string> header;
    for (std::size_t j = 0; j < spec.class_dims; ++j) {
        out.schema.push_back({"c" + std::to_string(j), ColumnKind::numerical, TaskKind::none, 0});
        header.push_back(out.schema.back().name);
    }
    for (std::size_t j = 0; j < spec.shared_dims; ++j) {
        out.schema.push_back({"s" + std::to_string(j), ColumnKind::numerical, TaskKind::none, 0});
        header.push_back(out.schema.back().name);
    }
    out.schema.push_back({"label", ColumnKind::label, TaskKind::binary, 2});
    header.push_back("label");

    out.csv_text = csv::to_line(header);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const int label = static_cast<int>(i % 2);
        const double mean = label == 0 ? -spec.separation / 2.0 : spec.separation / 2.0;
        std::vector<std::string> fields;
        fields.reserve(header.size());
        for (std::size_t j = 0; j < spec.class_dims; ++j)
            fields.push_back(format_double(rng.normal(mean, spec.noise)));
        for (std::size_t j = 0; j < spec.shared_dims; ++j)
            fields.push_back(format_double(rng.normal(0.0, 1.0)));
        fields.push_back(std::to_string(label));
        out.csv_text += csv::to_line(fields);
    }
    return out;
}

inline void write_synth_files(const SynthData& data, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto csv_path = std::filesystem::path(out_dir) / "synth.csv";
    const auto schema_path = std::filesystem::path(out_dir) / "synth_schema.json";
    {
        std::ofstream out(csv_path, std::ios::binary);
        if (!out) throw DataError("cannot write " + csv_path.string());
        out << data.csv_text;
    }
    {
        std::ofstream out(schema_path, std::ios::binary);
        if (!out) throw DataError("cannot write " + schema_path.string());
        out << schema_to_json(data.schema).dump(2) << "\n";
    }
}

}  // namespace switchtab
