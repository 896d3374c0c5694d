#pragma once

#include "autodiff.hpp"
#include "certificates.hpp"
#include "config.hpp"
#include "experiment.hpp"
#include "fft.hpp"
#include "linops.hpp"
#include "metrics.hpp"
#include "mri.hpp"
#include "paramnet.hpp"
#include "phantoms.hpp"
#include "prox.hpp"
#include "qmri.hpp"
#include "radon.hpp"
#include "solvers.hpp"
#include "tensor.hpp"
#include "tnsr_io.hpp"
#include "train.hpp"
#include "unrolled.hpp"
