# Experiment drivers: model selection and batch replications
