#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sncl {

// Error hierarchy shared by all modules. Everything derives from Error so
// callers can catch the whole family at the run boundary.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatches between tensors or buffers.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad input values (labels out of range, non-finite data, stale ids).
struct ValueError : Error {
    explicit ValueError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration (thresholds, empty grids, unknown keys).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed external files; message carries the byte offset where known.
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// API precondition violations (e.g. backward on a non-scalar node).
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

using Rng = std::mt19937_64;

// splitmix64 step; used to derive independent seed streams from one run seed
// so that data generation, init, and training noise do not share state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace sncl
