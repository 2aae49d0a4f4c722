#pragma once

#include "pno/operator.hpp"

namespace pno {

/// Checkpoint layout: the text line "PNO-CKPT v1", a key = value descriptor
/// block (shapes, activation, basis count, lattice, normalization constants,
/// geometry, sign convention, seed, config hash), a "---" separator, then the
/// flat parameter vector as little-endian IEEE-754 doubles in ensemble order
/// (player 1 value branch, value trunk, costate branch, costate trunk, then
/// player 2; costate blocks omitted when absent).
void save_checkpoint(const std::string& path, const OperatorEnsemble& ens);

OperatorEnsemble load_checkpoint(const std::string& path);

}  // namespace pno
