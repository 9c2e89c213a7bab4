#pragma once

#include <stdexcept>
#include <string>

namespace nrlg {

// Error taxonomy. The CLI maps these onto its exit-code contract:
// configuration/domain problems -> 2, I/O and transport -> 3,
// numeric aborts -> 4.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid parameter values (schedule bounds, config ranges, ...).
class domain_error : public error {
 public:
  explicit domain_error(const std::string& msg) : error(msg) {}
};

// Tensor / operator dimension mismatches.
class shape_error : public error {
 public:
  explicit shape_error(const std::string& msg) : error(msg) {}
};

// Requested feature not provided by this object (e.g. SVD of a
// matrix-free operator, Jacobian of an external denoiser).
class capability_error : public error {
 public:
  explicit capability_error(const std::string& msg) : error(msg) {}
};

// File and format problems.
class io_error : public error {
 public:
  explicit io_error(const std::string& msg) : error(msg) {}
};

// Config text problems; carries the 1-based offending line.
class parse_error : public error {
 public:
  parse_error(const std::string& msg, int line)
      : error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Singular kernel systems and iterative-solver non-convergence.
class solver_error : public error {
 public:
  explicit solver_error(const std::string& msg) : error(msg) {}
};

// Non-finite values detected inside a sampling loop.
class numeric_error : public error {
 public:
  numeric_error(const std::string& msg, int step, int timestep)
      : error(msg + " (step " + std::to_string(step) + ", t=" +
              std::to_string(timestep) + ")"),
        step_(step),
        timestep_(timestep) {}
  int step() const { return step_; }
  int timestep() const { return timestep_; }

 private:
  int step_;
  int timestep_;
};

// External-denoiser wire protocol violations.
class protocol_error : public error {
 public:
  explicit protocol_error(const std::string& msg) : error(msg) {}
};

}  // namespace nrlg
