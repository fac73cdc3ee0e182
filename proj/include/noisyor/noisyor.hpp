#pragma once

#include "noisyor/evidence_analysis.hpp"
#include "noisyor/exact.hpp"
#include "noisyor/harness.hpp"
#include "noisyor/network.hpp"
#include "noisyor/rng.hpp"
#include "noisyor/sampler.hpp"
