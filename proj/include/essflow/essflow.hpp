#ifndef ESSFLOW_ESSFLOW_HPP
#define ESSFLOW_ESSFLOW_HPP

#include "essflow/core.hpp"
#include "essflow/mlp.hpp"
#include "essflow/transport.hpp"
#include "essflow/source_transform.hpp"
#include "essflow/field_io.hpp"
#include "essflow/histogram.hpp"
#include "essflow/flow_training.hpp"
#include "essflow/potentials.hpp"
#include "essflow/diagnostics.hpp"
#include "essflow/parallel.hpp"
#include "essflow/ess.hpp"
#include "essflow/multifidelity.hpp"
#include "essflow/oracle.hpp"
#include "essflow/serialization.hpp"
#include "essflow/config.hpp"
#include "essflow/experiment.hpp"

#endif  // ESSFLOW_ESSFLOW_HPP
