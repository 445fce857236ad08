#pragma once

#include "wedl/checkpoint.hpp"
#include "wedl/compressor.hpp"
#include "wedl/dataset.hpp"
#include "wedl/embedding.hpp"
#include "wedl/ensemble.hpp"
#include "wedl/losses.hpp"
#include "wedl/matrix.hpp"
#include "wedl/metrics.hpp"
#include "wedl/numeric.hpp"
#include "wedl/optimizer.hpp"
#include "wedl/param.hpp"
#include "wedl/rng.hpp"
#include "wedl/runner.hpp"
