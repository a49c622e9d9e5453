# Wire schemas (pydantic models)
