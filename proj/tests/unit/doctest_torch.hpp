#pragma once

// libtorch defines its own CHECK macro; load it first so doctest's definitions win.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
