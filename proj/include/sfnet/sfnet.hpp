#pragma once

#include "sfnet/adam.hpp"
#include "sfnet/checkpoint.hpp"
#include "sfnet/config.hpp"
#include "sfnet/corpus.hpp"
#include "sfnet/csv.hpp"
#include "sfnet/error.hpp"
#include "sfnet/evaluation.hpp"
#include "sfnet/grad_check.hpp"
#include "sfnet/inference.hpp"
#include "sfnet/model.hpp"
#include "sfnet/objectives.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/pseudo_labeling.hpp"
#include "sfnet/tape.hpp"
#include "sfnet/tensor.hpp"
#include "sfnet/trainer.hpp"
#include "sfnet/types.hpp"
