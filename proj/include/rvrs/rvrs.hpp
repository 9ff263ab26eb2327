#pragma once

#include "dataset.hpp"
#include "error.hpp"
#include "gradients.hpp"
#include "hier_student_t.hpp"
#include "math.hpp"
#include "optimize.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "proposal.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "semi.hpp"
#include "target.hpp"
#include "types.hpp"
