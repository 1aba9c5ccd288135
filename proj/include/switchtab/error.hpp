#pragma once

#include <stdexcept>
#include <string>

namespace switchtab {

// Shape mismatches, bad arguments, malformed data files.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A finished operation produced NaN/Inf, or a gradient went non-finite.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint was fitted on a different schema than the data at hand.
struct SchemaMismatchError : std::runtime_error {
    explicit SchemaMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable, unparseable or future-versioned checkpoint file.
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace switchtab
