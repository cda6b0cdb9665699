#pragma once

#include "latentkit/directions.hpp"
#include "latentkit/editing.hpp"
#include "latentkit/error.hpp"
#include "latentkit/flatten.hpp"
#include "latentkit/generator.hpp"
#include "latentkit/linalg.hpp"
#include "latentkit/npy.hpp"
#include "latentkit/perceptual.hpp"
#include "latentkit/quality_gate.hpp"
#include "latentkit/random.hpp"
#include "latentkit/report.hpp"
