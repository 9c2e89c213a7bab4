#pragma once

#include "nrlg/denoiser.hpp"
#include "nrlg/errors.hpp"
#include "nrlg/external_denoiser.hpp"
#include "nrlg/forward.hpp"
#include "nrlg/guidance.hpp"
#include "nrlg/io.hpp"
#include "nrlg/linop.hpp"
#include "nrlg/metrics.hpp"
#include "nrlg/operators.hpp"
#include "nrlg/rng.hpp"
#include "nrlg/samplers.hpp"
#include "nrlg/schedule.hpp"
#include "nrlg/tensor.hpp"
#include "nrlg/version.hpp"
