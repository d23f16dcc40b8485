#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flntk {

// Shape / dimension mismatch between operands, or a non-square / asymmetric
// matrix where a symmetric one is required.
class shape_error : public std::invalid_argument {
public:
    explicit shape_error(const std::string& what) : std::invalid_argument(what) {}
};

// A scalar argument outside its admissible range (negative sigma, K = 0, ...).
class parameter_error : public std::invalid_argument {
public:
    explicit parameter_error(const std::string& what) : std::invalid_argument(what) {}
};

// Cholesky hit a non-positive pivot; `index` is the failing diagonal position.
class not_positive_definite_error : public std::runtime_error {
public:
    not_positive_definite_error(const std::string& what, std::size_t index)
        : std::runtime_error(what), index(index) {}
    std::size_t index;
};

// Loaded data violates a documented invariant (unit norms, label range, ...).
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed file; `line` is 1-based.
class parse_error : public std::runtime_error {
public:
    parse_error(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line(line) {}
    std::size_t line;
};

// lambda_min too small for a condition number / inverse to be meaningful.
class degenerate_spectrum_error : public std::runtime_error {
public:
    explicit degenerate_spectrum_error(const std::string& what) : std::runtime_error(what) {}
};

// An operation was called on data recorded at an insufficient level, or on a
// Gram matrix of the wrong kind.
class contract_error : public std::logic_error {
public:
    explicit contract_error(const std::string& what) : std::logic_error(what) {}
};

// Training residual exploded; carries where it happened.
class divergence_error : public std::runtime_error {
public:
    divergence_error(const std::string& what, std::size_t round, std::size_t client, std::size_t local_step)
        : std::runtime_error(what), round(round), client(client), local_step(local_step) {}
    std::size_t round;
    std::size_t client;
    std::size_t local_step;
};

class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace flntk
