#ifndef UADA_ERRORS_HPP
#define UADA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace uada {

// Bad argument to a library call (shape, channel count, enum value, ...).
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A configuration that cannot be run (e.g. no labeled target data).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File exists but its content does not match what the manifest promised.
struct CorruptData : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A loss term or gradient became non-finite during optimization.
struct PoisonedLoss : std::runtime_error {
    PoisonedLoss(std::string term, std::string last_good_checkpoint = {})
        : std::runtime_error("non-finite value in '" + term + "'" +
                             (last_good_checkpoint.empty()
                                  ? std::string{}
                                  : "; last good checkpoint: " + last_good_checkpoint)),
          term_(std::move(term)),
          checkpoint_(std::move(last_good_checkpoint)) {}

    const std::string& term() const noexcept { return term_; }
    const std::string& last_good_checkpoint() const noexcept { return checkpoint_; }

private:
    std::string term_;
    std::string checkpoint_;
};

}  // namespace uada

#endif  // UADA_ERRORS_HPP
