# Exposed-infected epidemic chains: simulation, structured HMM estimation and model selection
