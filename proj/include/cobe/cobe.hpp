#pragma once

#include "cobe/box.hpp"
#include "cobe/core_math.hpp"
#include "cobe/data_io.hpp"
#include "cobe/error.hpp"
#include "cobe/eval.hpp"
#include "cobe/frame.hpp"
#include "cobe/model.hpp"
#include "cobe/nce.hpp"
#include "cobe/protocols.hpp"
#include "cobe/pseudo_label.hpp"
#include "cobe/retrieval.hpp"
#include "cobe/rng.hpp"
#include "cobe/synthetic.hpp"
#include "cobe/text.hpp"
#include "cobe/trainer.hpp"
#include "cobe/version.hpp"
