"""Static HTML figures for relevance analyses"""
