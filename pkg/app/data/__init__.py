# Data package

