#pragma once

#include <stdexcept>
#include <string>

namespace lmtrace {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// tensor_store
class ArchiveFormatError : public Error { using Error::Error; };
class UnsupportedDtype : public Error { using Error::Error; };
class ShapeMismatch : public Error { using Error::Error; };

class MissingParameter : public Error {
public:
    explicit MissingParameter(std::string name)
        : Error("missing parameter: " + name), name_(std::move(name)) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class ModelLoadError : public Error { using Error::Error; };

// tokenizer
class UnknownTokenId : public Error { using Error::Error; };
class VocabFormatError : public Error { using Error::Error; };

// transformer / attribution / lens
class ContextOverflow : public Error { using Error::Error; };
class EmptyInput : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class DecompositionError : public Error { using Error::Error; };

// flowgraph
class InvalidThreshold : public Error { using Error::Error; };
class EmptyTargets : public Error { using Error::Error; };

// service
class ConfigError : public Error { using Error::Error; };
class InputTooLong : public Error { using Error::Error; };
class UnknownModel : public Error { using Error::Error; };

}  // namespace lmtrace
