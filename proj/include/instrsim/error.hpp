#pragma once

#include <stdexcept>
#include <string>

namespace instrsim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error("parameter error: " + what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class ConstraintError : public Error {
 public:
  explicit ConstraintError(const std::string& what) : Error("constraint error: " + what) {}
};

class IngestionError : public Error {
 public:
  explicit IngestionError(const std::string& what) : Error("ingestion error: " + what) {}
};

class EmptyDatasetError : public Error {
 public:
  explicit EmptyDatasetError(const std::string& what) : Error("empty dataset: " + what) {}
};

class EmptyMixError : public Error {
 public:
  explicit EmptyMixError(const std::string& what) : Error("empty mix: " + what) {}
};

class MissingStemError : public Error {
 public:
  explicit MissingStemError(const std::string& what) : Error("missing stem: " + what) {}
};

class SamplingExhaustedError : public Error {
 public:
  explicit SamplingExhaustedError(const std::string& what)
      : Error("sampling exhausted: " + what) {}
};

class ConflictError : public Error {
 public:
  explicit ConflictError(const std::string& what) : Error("triplet conflict: " + what) {}
};

class ProvenanceError : public Error {
 public:
  explicit ProvenanceError(const std::string& what) : Error("provenance error: " + what) {}
};

class DatasetError : public Error {
 public:
  explicit DatasetError(const std::string& what) : Error("dataset error: " + what) {}
};

class DependencyError : public Error {
 public:
  explicit DependencyError(const std::string& what) : Error("dependency error: " + what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("training error: " + what) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what) : Error("evaluation error: " + what) {}
};

class ExportError : public Error {
 public:
  explicit ExportError(const std::string& what) : Error("export error: " + what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format error: " + what) {}
};

}  // namespace instrsim
