#pragma once

#include "cft/annotate.hpp"
#include "cft/core.hpp"
#include "cft/evalx.hpp"
#include "cft/generator/backend.hpp"
#include "cft/generator/decode.hpp"
#include "cft/generator/remote_backend.hpp"
#include "cft/generator/toy_backend.hpp"
#include "cft/rng.hpp"
#include "cft/select.hpp"
#include "cft/tinylm/checkpoint.hpp"
#include "cft/tinylm/loss.hpp"
#include "cft/tinylm/model.hpp"
#include "cft/tinylm/synth.hpp"
#include "cft/tinylm/train.hpp"
#include "cft/tokenizer.hpp"
#include "cft/verifier.hpp"
