"""Heat-conducting compressible primitive equations in averaged-density form."""
