#pragma once

#include "introvae/adam.hpp"
#include "introvae/checkpoint.hpp"
#include "introvae/config.hpp"
#include "introvae/core_math.hpp"
#include "introvae/data.hpp"
#include "introvae/errors.hpp"
#include "introvae/image_io.hpp"
#include "introvae/layers.hpp"
#include "introvae/metrics.hpp"
#include "introvae/networks.hpp"
#include "introvae/rng.hpp"
#include "introvae/tensor.hpp"
#include "introvae/theory.hpp"
#include "introvae/training.hpp"
