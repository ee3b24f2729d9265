#pragma once

#include <stdexcept>
#include <string>

namespace osp {

// Error taxonomy shared by all modules. Each type maps to one failure class;
// the CLI translates them into exit codes (config -> 2, data/checkpoint -> 3).

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error("contract violation: " + msg) {}
};

struct DegeneratePrototype : std::runtime_error {
    explicit DegeneratePrototype(const std::string& msg)
        : std::runtime_error("degenerate prototype: " + msg) {}
};

struct EmptyMask : std::runtime_error {
    explicit EmptyMask(const std::string& msg) : std::runtime_error("empty mask: " + msg) {}
};

struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error("state error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct GenError : std::runtime_error {
    explicit GenError(const std::string& msg) : std::runtime_error("generator error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct CorruptCheckpoint : std::runtime_error {
    explicit CorruptCheckpoint(const std::string& msg)
        : std::runtime_error("corrupt checkpoint: " + msg) {}
};

}  // namespace osp
