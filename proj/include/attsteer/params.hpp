#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "attsteer/autodiff.hpp"
#include "attsteer/tensor.hpp"

namespace attsteer {

/// Named parameter tensors, ordered by name so iteration is deterministic.
template <typename T>
using BasicParams = std::map<std::string, BasicTensor<T>>;
using Params = BasicParams<float>;

/// Parameters bound as leaves onto a tape.
template <typename T>
using ParamVars = std::map<std::string, Var<T>>;

template <typename U, typename T>
BasicParams<U> cast_params(const BasicParams<T>& params) {
  BasicParams<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>());
  return out;
}

/// Binds every parameter onto the tape, as trainable leaves or constants.
template <typename T>
ParamVars<T> bind_params(Tape<T>& tape, const BasicParams<T>& params, bool trainable) {
  ParamVars<T> vars;
  for (const auto& [name, t] : params) {
    vars.emplace(name, trainable ? tape.leaf(t, name) : tape.constant(t));
  }
  return vars;
}

/// Looks up a bound parameter, naming it in the error when absent.
template <typename T>
Var<T> param(const ParamVars<T>& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary checkpoint: magic "CAPT1", then one record per parameter:
/// u64 name length, name bytes, u64 rank, u64 extents, f32 elements; all
/// little-endian. Records follow name order.
void write_checkpoint(std::ostream& os, const Params& params);
Params read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Params& params);
Params load_checkpoint(const std::filesystem::path& path);

}  // namespace attsteer
