#pragma once

#include "mbsts/error.hpp"
#include "mbsts/mbsts_tl.hpp"
#include "mbsts/panel.hpp"
#include "mbsts/priors.hpp"
#include "mbsts/sampler.hpp"
#include "mbsts/sources.hpp"
#include "mbsts/statespace.hpp"
#include "mbsts/synthetic.hpp"
