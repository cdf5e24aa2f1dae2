#pragma once

// Everything in one include.

#include "rtgs/checkpoint.hpp"
#include "rtgs/oracles.hpp"
#include "rtgs/pipeline.hpp"
#include "rtgs/synthetic.hpp"
#include "rtgs/trainer.hpp"
