# LangGraph package

