#pragma once

#include "qffn/data.hpp"
#include "qffn/diagnostics.hpp"
#include "qffn/encoder.hpp"
#include "qffn/error.hpp"
#include "qffn/experiment.hpp"
#include "qffn/pqc.hpp"
#include "qffn/qffn_block.hpp"
#include "qffn/serialization.hpp"
#include "qffn/state_vector.hpp"
#include "qffn/tensor.hpp"
#include "qffn/trainer.hpp"
